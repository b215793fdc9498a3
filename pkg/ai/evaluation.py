"""
Evaluation harness: entity precision, NLU precision, trigger rate and
correct trigger rate over friction and clean sets, the null-threshold
sweep, per-subset reports and ablation comparisons.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import plotly.graph_objects as go
from tqdm import tqdm

from utils.logging_setup import progress_enabled
from utils.storage import atomic_write_text, read_lines

from .pipeline import RewriteResult, Rewriter
from .synthdata import TAG_FEW_SHOT, TAG_KG_RELATION, TAG_ZERO_SHOT, RephraseSample

logger = logging.getLogger(__name__)

DEFAULT_THETAS = (3.0, 4.0, 5.0, 6.0, 7.0)
DEFAULT_CLEAN_TR_CAP = 0.02
SUBSETS = ("overall", TAG_ZERO_SHOT, TAG_FEW_SHOT, TAG_KG_RELATION)
METRICS = ("entity_precision", "nlu_precision", "trigger_rate", "correct_trigger_rate")


@dataclass(frozen=True)
class Outcome:
    """One evaluated sample: what the system did and what it should have produced."""
    source: str
    triggered: bool
    entity: Optional[str]
    hypothesis: Optional[str]
    gold_entity: Optional[str]
    gold_hypothesis: Optional[str]
    tags: Tuple[str, ...] = ()

    @property
    def entity_correct(self) -> bool:
        return self.triggered and self.entity is not None and self.entity == self.gold_entity

    @property
    def hypothesis_correct(self) -> bool:
        return self.triggered and self.hypothesis is not None and self.hypothesis == self.gold_hypothesis


def outcome_from(result: RewriteResult, sample: RephraseSample) -> Outcome:
    hyp = result.rewritten_hypothesis.serialize() if result.rewritten_hypothesis is not None else None
    gold_hyp = None if sample.is_clean else sample.target_hypothesis.serialize()
    return Outcome(sample.source, result.triggered, result.entity if result.triggered else None,
                   hyp, sample.target_entity, gold_hyp, sample.tags)


@dataclass
class MetricsReport:
    label: str
    total: int = 0
    triggered: int = 0
    entity_correct: int = 0
    hypothesis_correct: int = 0
    clean: bool = False
    flagged: bool = False

    @property
    def trigger_rate(self) -> float:
        return self.triggered / self.total if self.total else 0.0

    @property
    def entity_precision(self) -> Optional[float]:
        if self.clean or not self.triggered:
            return None
        return self.entity_correct / self.triggered

    @property
    def nlu_precision(self) -> Optional[float]:
        if self.clean or not self.triggered:
            return None
        return self.hypothesis_correct / self.triggered

    @property
    def correct_trigger_rate(self) -> Optional[float]:
        if self.clean:
            return None
        return self.hypothesis_correct / self.total if self.total else 0.0

    def metrics(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRICS}

    def as_dict(self) -> Dict:
        data = {
            "label": self.label,
            "total": self.total,
            "triggered": self.triggered,
            "entity_correct": self.entity_correct,
            "hypothesis_correct": self.hypothesis_correct,
            "clean": self.clean,
            "flagged": self.flagged,
        }
        data.update(self.metrics())
        return data


def summarize(outcomes: Sequence[Outcome], label: str, clean: bool = False) -> MetricsReport:
    report = MetricsReport(label, clean=clean)
    for outcome in outcomes:
        report.total += 1
        if outcome.triggered:
            report.triggered += 1
            report.entity_correct += outcome.entity_correct
            report.hypothesis_correct += outcome.hypothesis_correct
    report.flagged = report.total == 0
    return report


def evaluate(results: Sequence[RewriteResult], samples: Sequence[RephraseSample], label: str,
             clean: bool = False) -> MetricsReport:
    """Metrics for results aligned index-by-index with their gold samples."""
    if len(results) != len(samples):
        raise ValueError(f"{len(results)} results for {len(samples)} gold samples")
    return summarize([outcome_from(r, s) for r, s in zip(results, samples)], label, clean)


def check_identity(report: MetricsReport) -> bool:
    """Correct triggers are a subset of triggers, and CTR equals TR x NLU-P."""
    if report.clean:
        return 0 <= report.triggered <= report.total
    if not 0 <= report.hypothesis_correct <= report.triggered <= report.total:
        return False
    if not report.triggered:
        return report.correct_trigger_rate == 0.0
    return math.isclose(report.correct_trigger_rate, report.trigger_rate * report.nlu_precision,
                        rel_tol=1e-12, abs_tol=1e-15)


# ============ Threshold sweep ============

@dataclass
class SweepRow:
    theta: float
    friction: MetricsReport
    clean: MetricsReport


@dataclass
class SweepResult:
    theta: float
    feasible: bool
    clean_tr_cap: float
    rows: List[SweepRow] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {
            "theta": self.theta,
            "feasible": self.feasible,
            "clean_tr_cap": self.clean_tr_cap,
            "rows": [{"theta": r.theta, "friction": r.friction.as_dict(), "clean": r.clean.as_dict()} for r in self.rows],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SweepResult":
        def report(d):
            return MetricsReport(d["label"], d["total"], d["triggered"], d["entity_correct"],
                                 d["hypothesis_correct"], d["clean"], d["flagged"])
        rows = [SweepRow(r["theta"], report(r["friction"]), report(r["clean"])) for r in data.get("rows", [])]
        return cls(data["theta"], data["feasible"], data["clean_tr_cap"], rows)


def select_theta(rows: Sequence[SweepRow], clean_tr_cap: float) -> Tuple[float, bool]:
    """
    Among thetas whose clean trigger rate stays within the cap, the one with
    the highest friction CTR (ties to the larger theta). Without survivors,
    the theta with the lowest clean trigger rate, flagged infeasible.
    """
    if not rows:
        raise ValueError("no thetas to select from")
    survivors = [r for r in rows if r.clean.trigger_rate <= clean_tr_cap]
    if survivors:
        best = max(survivors, key=lambda r: (r.friction.correct_trigger_rate or 0.0, r.theta))
        return best.theta, True
    best = min(rows, key=lambda r: (r.clean.trigger_rate, -r.theta))
    return best.theta, False


def sweep_theta(
    rewriter: Rewriter,
    friction: Sequence[RephraseSample],
    clean: Sequence[RephraseSample],
    thetas: Sequence[float] = DEFAULT_THETAS,
    clean_tr_cap: float = DEFAULT_CLEAN_TR_CAP,
) -> SweepResult:
    """Analyze every sample once, then apply each theta to the cached analyses."""
    if not thetas:
        raise ValueError("thetas must be non-empty")
    friction_analyses = [rewriter.analyze(s.source) for s in tqdm(friction, desc="sweep friction", disable=not progress_enabled())]
    clean_analyses = [rewriter.analyze(s.source) for s in tqdm(clean, desc="sweep clean", disable=not progress_enabled())]

    rows = []
    for theta in thetas:
        f_results = [rewriter.decide(a, theta, s.hypothesis) for a, s in zip(friction_analyses, friction)]
        c_results = [rewriter.decide(a, theta, s.hypothesis) for a, s in zip(clean_analyses, clean)]
        rows.append(SweepRow(theta, evaluate(f_results, friction, f"friction@{theta:g}"),
                             evaluate(c_results, clean, f"clean@{theta:g}", clean=True)))

    chosen, feasible = select_theta(rows, clean_tr_cap)
    if feasible:
        logger.info("chose theta %g (clean TR cap %g)", chosen, clean_tr_cap)
    else:
        logger.warning("no theta keeps clean TR within %g; fell back to theta %g", clean_tr_cap, chosen)
    return SweepResult(chosen, feasible, clean_tr_cap, rows)


# ============ Subsets and ablations ============

def subset_report(outcomes: Sequence[Outcome], label: str = "") -> Dict[str, MetricsReport]:
    """Overall plus one report per subset tag; empty subsets come back flagged."""
    prefix = f"{label}/" if label else ""
    reports = {"overall": summarize(outcomes, f"{prefix}overall")}
    for tag in SUBSETS[1:]:
        reports[tag] = summarize([o for o in outcomes if tag in o.tags], f"{prefix}{tag}")
    return reports


def compare_reports(base: Dict[str, MetricsReport], other: Dict[str, MetricsReport]) -> Dict[str, Dict[str, Optional[float]]]:
    """Per subset and metric, other minus base; None where either side is undefined."""
    deltas = {}
    for name in base:
        if name not in other:
            continue
        row = {}
        for metric in METRICS:
            a, b = getattr(base[name], metric), getattr(other[name], metric)
            row[metric] = None if a is None or b is None else b - a
        deltas[name] = row
    return deltas


# ============ Output ============

def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Fixed-width text table, one row per report."""
    header = f"{'set':<28}{'total':>7}{'trig':>7}{'E-P':>9}{'NLU-P':>9}{'TR':>9}{'CTR':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.label:<28}{r.total:>7}{r.triggered:>7}{_fmt(r.entity_precision):>9}"
                     f"{_fmt(r.nlu_precision):>9}{_fmt(r.trigger_rate):>9}{_fmt(r.correct_trigger_rate):>9}")
    return "\n".join(lines)


def report_records(reports: Sequence[MetricsReport]) -> List[str]:
    """One `key=value` line per report; clean reports carry the trigger rate only."""
    lines = []
    for r in reports:
        fields = {"label": r.label, "total": r.total, "triggered": r.triggered, "trigger_rate": _fmt(r.trigger_rate)}
        if not r.clean:
            fields.update(entity_correct=r.entity_correct, hypothesis_correct=r.hypothesis_correct,
                          entity_precision=_fmt(r.entity_precision), nlu_precision=_fmt(r.nlu_precision),
                          correct_trigger_rate=_fmt(r.correct_trigger_rate))
        if r.flagged:
            fields["flagged"] = "empty"
        lines.append(" ".join(f"{k}={v}" for k, v in fields.items()))
    return lines


def sweep_figure(sweep: SweepResult) -> go.Figure:
    thetas = [r.theta for r in sweep.rows]
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=thetas, y=[r.friction.correct_trigger_rate for r in sweep.rows],
                             mode="lines+markers", name="friction CTR"))
    fig.add_trace(go.Scatter(x=thetas, y=[r.friction.trigger_rate for r in sweep.rows],
                             mode="lines+markers", name="friction TR"))
    fig.add_trace(go.Scatter(x=thetas, y=[r.clean.trigger_rate for r in sweep.rows],
                             mode="lines+markers", name="clean TR"))
    fig.add_hline(y=sweep.clean_tr_cap, line_dash="dot", annotation_text="clean TR cap")
    fig.add_vline(x=sweep.theta, line_dash="dash", annotation_text=f"θ = {sweep.theta:g}")
    fig.update_layout(xaxis_title="null threshold θ", yaxis_title="rate", yaxis_range=[0, 1], height=420,
                      margin=dict(l=20, r=20, t=40, b=20))
    return fig


def write_sweep_html(sweep: SweepResult, filepath: Path):
    atomic_write_text(filepath, sweep_figure(sweep).to_html(include_plotlyjs=True, full_html=True))


def write_outcomes(filepath: Path, outcomes: Sequence[Outcome]):
    lines = [json.dumps(o.__dict__, sort_keys=True, ensure_ascii=False) for o in outcomes]
    atomic_write_text(filepath, "\n".join(lines) + ("\n" if lines else ""))


def read_outcomes(filepath: Path) -> List[Outcome]:
    outcomes = []
    for line in read_lines(filepath):
        if line.strip():
            data = json.loads(line)
            data["tags"] = tuple(data.get("tags", ()))
            outcomes.append(Outcome(**data))
    return outcomes

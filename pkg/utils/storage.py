"""
Local storage utilities for artifact persistence.
JSON files for structured data, a plain-header tensor format for checkpoints,
and run manifests. Every write goes through a temp file + rename.
"""

import hashlib
import json
import os
import tempfile
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch

# Base data directory (shipped fixtures live below it)
DATA_DIR = Path(__file__).parent.parent / "data"
FIXTURES_DIR = DATA_DIR / "fixtures"

TENSOR_MAGIC = "KGECO-TENSORS 1"
TENSOR_END = "END"


def ensure_dir(path: Path) -> Path:
    """Ensure a directory exists and return it."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_bytes(filepath: Path, payload: bytes):
    """Write bytes next to the target and rename over it."""
    filepath = Path(filepath)
    ensure_dir(filepath.parent)
    fd, tmp = tempfile.mkstemp(dir=filepath.parent, prefix=f".{filepath.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, filepath)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(filepath: Path, text: str):
    atomic_write_bytes(filepath, text.encode("utf-8"))


def load_json(filepath: Path) -> Dict:
    """Load JSON file, return empty dict if not exists."""
    try:
        if Path(filepath).exists():
            with open(filepath, 'r', encoding='utf-8') as f:
                return json.load(f)
    except (json.JSONDecodeError, IOError):
        pass
    return {}


def save_json(filepath: Path, data: Dict):
    """Save data to JSON file atomically."""
    text = json.dumps(data, indent=2, ensure_ascii=False, default=str, sort_keys=True)
    atomic_write_text(filepath, text + "\n")


def canonical_json(data: Dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_hash(filepath: Path) -> str:
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(filepath, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_lines(filepath: Path) -> List[str]:
    with open(filepath, "r", encoding="utf-8") as f:
        return f.read().splitlines()


# ============ Tensor checkpoints ============

def save_tensors(filepath: Path, tensors: Dict[str, torch.Tensor], metadata: Optional[Dict[str, str]] = None):
    """
    Save named tensors as little-endian float32 with a plain-text header.

    Layout:
        KGECO-TENSORS 1
        # key=value           (metadata lines)
        name<TAB>d0,d1,...    (one line per tensor, in file order)
        END
        <raw float32 data for each tensor, in header order>
    """
    header = [TENSOR_MAGIC]
    for key, value in sorted((metadata or {}).items()):
        header.append(f"# {key}={value}")
    blobs = []
    for name in sorted(tensors):
        array = tensors[name].detach().cpu().numpy().astype("<f4")
        header.append(f"{name}\t{','.join(str(d) for d in array.shape)}")
        blobs.append(np.ascontiguousarray(array).tobytes())
    header.append(TENSOR_END)
    payload = ("\n".join(header) + "\n").encode("utf-8") + b"".join(blobs)
    atomic_write_bytes(filepath, payload)


def load_tensors(filepath: Path, dtype: torch.dtype = torch.float64) -> Tuple[Dict[str, torch.Tensor], Dict[str, str]]:
    """Load a checkpoint written by save_tensors. Returns (tensors, metadata)."""
    with open(filepath, "rb") as f:
        raw = f.read()
    lines = []
    offset = 0
    while True:
        end = raw.index(b"\n", offset)
        line = raw[offset:end].decode("utf-8")
        offset = end + 1
        if line == TENSOR_END:
            break
        lines.append(line)
    if not lines or lines[0] != TENSOR_MAGIC:
        raise ValueError(f"{filepath} is not a tensor checkpoint")

    metadata = {}
    shapes = []
    for line in lines[1:]:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            metadata[key] = value
            continue
        name, _, dims = line.partition("\t")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        shapes.append((name, shape))

    tensors = {}
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        tensors[name] = torch.from_numpy(array.astype(np.float64)).to(dtype)
    return tensors, metadata


def checkpoint_metadata(filepath: Path) -> Dict[str, str]:
    """Read only the metadata lines of a checkpoint header."""
    metadata = {}
    with open(filepath, "rb") as f:
        for raw_line in f:
            line = raw_line.decode("utf-8", errors="replace").rstrip("\n")
            if line == TENSOR_END:
                break
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                metadata[key] = value
    return metadata


# ============ Run manifests ============

class RunTimer:
    """Collects what a subcommand needs for its manifest."""

    def __init__(self, subcommand: str):
        self.subcommand = subcommand
        self.started_at = datetime.now().isoformat()
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return round(time.perf_counter() - self._start, 3)


def write_manifest(
    manifest_dir: Path,
    timer: RunTimer,
    config_hash: str,
    inputs: Iterable[Path],
    outputs: Iterable[Path],
    extra: Optional[Dict] = None,
) -> Path:
    """Write <manifest_dir>/<subcommand>.json describing one run."""
    manifest = {
        "subcommand": timer.subcommand,
        "config_hash": config_hash,
        "inputs": {str(p): file_hash(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): file_hash(p) for p in outputs if Path(p).exists()},
        "started_at": timer.started_at,
        "wall_time_seconds": timer.elapsed(),
    }
    if extra:
        manifest["report"] = extra
    path = Path(manifest_dir) / f"{timer.subcommand}.json"
    save_json(path, manifest)
    return path



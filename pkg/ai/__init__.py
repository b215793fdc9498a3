"""Models, training loops, rewriting and evaluation."""

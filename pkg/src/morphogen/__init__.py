"""morphogen: train a sparse convolutional autoencoder on digit images,
iterate it to fixed points to dream up new symbols, and catalog the results."""

import os

__version__ = "0.1.0"


def thread_count() -> int:
    """Worker cap from MORPHOGEN_THREADS, defaulting to the processor count."""
    raw = os.environ.get("MORPHOGEN_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1

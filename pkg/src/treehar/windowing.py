"""Per-event sample windows.

Every ON event becomes one prediction target carrying its k-1
predecessors; nothing is discarded at sequence starts, the missing
history is zero-padded instead. Windows never span files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .casas import DEFAULT_VOCAB, LabelPair, one_hot
from .numerics import Tensor


@dataclass
class SampleWindow:
    """The k most recent event embeddings, oldest first; the last one is
    the labeled target event and is never padding."""

    embeddings: list           # k tensors shaped (1, vocab)
    label: LabelPair
    pad_count: int
    source: str = ""           # provenance for canonical ordering / debug dumps
    index: int = 0

    @property
    def k(self) -> int:
        return len(self.embeddings)

    def stacked(self) -> np.ndarray:
        """(k, vocab) array of the embeddings, oldest first."""
        return np.concatenate([e.data for e in self.embeddings], axis=0)


def make_windows(events, k: int, vocab=DEFAULT_VOCAB, source: str = ""):
    """One window per event: for event t, embeddings are events t-k+1..t,
    left-padded with zero vectors while t < k-1."""
    if k < 2:
        raise ValueError(f"window size k must be >= 2, got {k}")
    events = list(events)
    if not events:
        return []
    embeddings = [one_hot(e, vocab) for e in events]
    zero = np.zeros((1, len(vocab)))
    windows = []
    for t, event in enumerate(events):
        pad = max(0, k - 1 - t)
        tail = embeddings[max(0, t - k + 1):t + 1]
        window = [Tensor(zero.copy()) for _ in range(pad)] + tail
        windows.append(SampleWindow(
            embeddings=window,
            label=LabelPair(event.resident_id, event.activity_id),
            pad_count=pad,
            source=source,
            index=t,
        ))
    return windows


def stack_windows(windows, dtype=np.float64):
    """Pack windows for batched training.

    Returns (events, residents, activities): events is (n, k, vocab),
    label arrays are (n,) ints. Window order is preserved.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("no windows to stack")
    k = windows[0].k
    events = np.stack([w.stacked() for w in windows]).astype(dtype)
    residents = np.array([w.label.resident_id for w in windows], dtype=np.int64)
    activities = np.array([w.label.activity_id for w in windows], dtype=np.int64)
    if events.shape[1] != k:
        raise ValueError("inconsistent window sizes")
    return events, residents, activities


def dump_windows_csv(windows, path):
    """Debug dump: source, index, pad_count, resident, activity."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "index", "pad_count", "resident", "activity"])
        for w in windows:
            writer.writerow([
                w.source, w.index, w.pad_count,
                w.label.resident_id, w.label.activity_id,
            ])

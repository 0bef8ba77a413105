"""Padding variable-size tasks into fixed-shape arrays with masks."""

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    xc: np.ndarray  # (B, N)
    yc: np.ndarray
    mc: np.ndarray  # 1.0 for real points, 0.0 for padding
    xt: np.ndarray  # (B, M)
    yt: np.ndarray
    mt: np.ndarray

    @property
    def size(self):
        return self.xc.shape[0]

    def all_inputs(self):
        """Every real input in the batch (context and target)."""
        return np.concatenate([self.xc[self.mc > 0], self.xt[self.mt > 0]])

    def with_context_as_target(self):
        """Targets extended by the context points (padding stays masked)."""
        return Batch(
            self.xc,
            self.yc,
            self.mc,
            np.concatenate([self.xt, self.xc], axis=1),
            np.concatenate([self.yt, self.yc], axis=1),
            np.concatenate([self.mt, self.mc], axis=1),
        )

    def union_as_context(self):
        """Context D_c union D_t, used for the target-conditioned encoder."""
        return (
            np.concatenate([self.xc, self.xt], axis=1),
            np.concatenate([self.yc, self.yt], axis=1),
            np.concatenate([self.mc, self.mt], axis=1),
        )

    def shifted(self, delta):
        return Batch(self.xc + delta, self.yc, self.mc, self.xt + delta, self.yt, self.mt)


def _pad(rows, width):
    out = np.zeros((len(rows), width))
    mask = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        out[i, : r.size] = r
        mask[i, : r.size] = 1.0
    return out, mask


def collate(tasks):
    tasks = list(tasks)
    n = max((t.n_context for t in tasks), default=0)
    m = max(t.n_target for t in tasks)
    xc, mc = _pad([t.xc for t in tasks], n)
    yc, _ = _pad([t.yc for t in tasks], n)
    xt, mt = _pad([t.xt for t in tasks], m)
    yt, _ = _pad([t.yt for t in tasks], m)
    return Batch(xc, yc, mc, xt, yt, mt)


def from_arrays(xc, yc, xt, yt=None):
    """Single-task batch from plain sequences."""
    xc = np.asarray(xc, dtype=np.float64).reshape(1, -1)
    yc = np.asarray(yc, dtype=np.float64).reshape(1, -1)
    xt = np.asarray(xt, dtype=np.float64).reshape(1, -1)
    yt = np.zeros_like(xt) if yt is None else np.asarray(yt, dtype=np.float64).reshape(1, -1)
    return Batch(xc, yc, np.ones_like(xc), xt, yt, np.ones_like(xt))

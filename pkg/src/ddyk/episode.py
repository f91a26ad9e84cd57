"""Per-episode closed-loop records."""
from __future__ import annotations

import csv
import math

import numpy as np

ABORT_THRESHOLD = 1e6
ABORT_PENALTY = -1e3

_FIELDS = ("t", "r", "y", "u", "e", "reward")


class EpisodeLog:
    """Append-only record of ``(t, r, y, u, e, reward)`` samples.

    The discounted return ``sum_t gamma_rl^t reward_t`` is computed by
    :meth:`close` from the stored rewards. An episode that exceeded the
    instability threshold is marked ``aborted`` with the offending step.
    """

    def __init__(self, gamma_rl=0.99, dt=1.0):
        if not 0.0 < gamma_rl <= 1.0:
            raise ValueError(f"gamma_rl must lie in (0, 1], got {gamma_rl}")
        self.gamma_rl = float(gamma_rl)
        self.dt = float(dt)
        self._rows = []
        self.aborted = False
        self.abort_step = None
        self.discounted_return = 0.0
        self.extra = {}

    def append(self, r, y, u, e, reward):
        self._rows.append((len(self._rows) * self.dt, r, y, u, e, reward))

    def abort(self, step):
        self.aborted = True
        self.abort_step = int(step)

    def close(self):
        self.discounted_return = discounted_return(self.column("reward"), self.gamma_rl)
        return self

    def __len__(self):
        return len(self._rows)

    def column(self, name):
        i = _FIELDS.index(name)
        return np.array([row[i] for row in self._rows], dtype=float)

    @property
    def max_abs_y(self):
        y = self.column("y")
        return float(np.max(np.abs(y))) if y.size else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_FIELDS)
            for row in self._rows:
                w.writerow([repr(float(v)) for v in row])


def discounted_return(rewards, gamma_rl):
    acc = 0.0
    g = 1.0
    for r in rewards:
        acc += g * r
        g *= gamma_rl
    return acc


def is_unstable(value):
    return not math.isfinite(value) or abs(value) > ABORT_THRESHOLD

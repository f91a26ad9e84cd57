"""Hankel-matrix behavioral models for SISO LTI systems.

A :class:`HankelSystem` stacks the order-``L`` Hankel matrices of recorded
input/output data together with their one-sample time shifts. Windows of
length ``L`` are mapped to coefficient vectors ``alpha`` by a minimum-norm
least-squares solve, which lets the data stand in for a state-space model:
checking trajectories, predicting the next output, and rolling the model
forward.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels

SVD_RTOL = 1e-10
PE_RTOL = 1e-9
CONSISTENCY_TOL = 1e-6


class DimensionError(ValueError):
    """Window length incompatible with the data length."""


class InconsistentTrajectoryError(ValueError):
    """The requested window is not (numerically) a trajectory of the data."""

    def __init__(self, residual, tol):
        super().__init__(f"window residual {residual:.3e} exceeds tolerance {tol:.1e}")
        self.residual = residual
        self.tol = tol


class SimulationDivergedError(FloatingPointError):
    """A rollout produced non-finite values."""

    def __init__(self, step, what="trajectory"):
        super().__init__(f"{what} became non-finite at step {step}")
        self.step = step


class NotPersistentlyExcitingError(ValueError):
    pass


@dataclass
class Trajectory:
    """Paired input/output samples of a SISO system."""

    inputs: np.ndarray
    outputs: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        if len(self.inputs) != len(self.outputs):
            raise DimensionError(
                f"inputs ({len(self.inputs)}) and outputs ({len(self.outputs)}) differ in length"
            )
        if len(self.inputs) < 1:
            raise DimensionError("trajectory must contain at least one sample")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("trajectory contains non-finite samples")

    def __len__(self):
        return len(self.inputs)

    @property
    def times(self):
        return np.arange(len(self)) * self.dt

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u", "y"])
            for t, u, y in zip(self.times, self.inputs, self.outputs):
                w.writerow([repr(float(t)), repr(float(u)), repr(float(y))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no samples")
        t = np.array([float(r["t"]) for r in rows])
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls([float(r["u"]) for r in rows], [float(r["y"]) for r in rows], dt)


@dataclass
class Window:
    """The most recent ``L`` inputs and outputs, oldest first."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float).reshape(-1)
        self.y = np.array(self.y, dtype=float).reshape(-1)
        if len(self.u) != len(self.y):
            raise DimensionError("window input and output lengths differ")

    @classmethod
    def zeros(cls, L):
        return cls(np.zeros(L), np.zeros(L))

    @property
    def L(self):
        return len(self.u)

    def stacked(self):
        return np.concatenate([self.u, self.y])

    def push(self, u, y):
        """Slide by one sample, appending ``(u, y)``."""
        self.u[:-1] = self.u[1:]
        self.u[-1] = u
        self.y[:-1] = self.y[1:]
        self.y[-1] = y

    def copy(self):
        return Window(self.u.copy(), self.y.copy())


def build_hankel(z, L):
    """Order-``L`` Hankel matrix with ``H[i, j] = z[i + j]``.

    Args:
        z: 1-D sequence of length ``N``.
        L: number of rows, ``1 <= L <= N``.

    Returns:
        Array of shape ``(L, N - L + 1)``.

    Raises:
        DimensionError: if ``L`` is out of range.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    N = len(z)
    if not (isinstance(L, (int, np.integer)) and 1 <= L <= N):
        raise DimensionError(f"window length L={L} must satisfy 1 <= L <= len(z)={N}")
    return sliding_window_view(z, N - L + 1).copy()


@dataclass
class PEReport:
    rank: int
    required: int
    satisfied: bool


def check_persistent_excitation(z, L, rank_tol=PE_RTOL):
    """Rank test of ``H_L(z)`` with a relative singular-value threshold."""
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    s = np.linalg.svd(build_hankel(z, L), compute_uv=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    return PEReport(rank=rank, required=L, satisfied=rank == L)


def truncated_pinv(M, rtol=SVD_RTOL):
    """Moore-Penrose pseudo-inverse dropping singular values below ``rtol * s_max``."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(M.T.shape)
    keep = s > rtol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


@dataclass(frozen=True)
class HankelSystem:
    """Data-driven internal model built once from exploration data.

    ``Hu``/``Hy`` use samples ``0..N-1`` and ``Hu_shift``/``Hy_shift`` use
    samples ``1..N`` of an ``(N+1)``-sample record. Treat instances as
    immutable; all derived matrices are computed at construction.
    """

    Hu: np.ndarray
    Hy: np.ndarray
    Hu_shift: np.ndarray
    Hy_shift: np.ndarray
    L: int
    pe_order_checked: int
    pe_report: PEReport
    noisy: bool = False
    consistency_tol: float = CONSISTENCY_TOL
    H_pinv: np.ndarray = field(repr=False, default=None)
    predictor: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_data(cls, u, y, L, order_bound=None, noisy=False, require_pe=False,
                  rank_tol=PE_RTOL, svd_rtol=SVD_RTOL,
                  consistency_tol=CONSISTENCY_TOL):
        """Build the model from ``N + 1`` input/output samples.

        Args:
            u, y: recorded sequences of equal length ``N + 1``.
            L: window length (an upper bound on the system order suffices).
            order_bound: declared upper bound ``n`` on the state dimension;
                persistency of excitation is checked at order ``L + 1 + n``.
                Defaults to ``L``.
            noisy: when true, inconsistent windows only warn.
            require_pe: raise instead of recording a failed PE check.
        """
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(u) != len(y):
            raise DimensionError("u and y must have the same length")
        if len(u) < 2:
            raise DimensionError("need at least two samples to form shifted matrices")
        N = len(u) - 1
        if not (1 <= L <= N):
            raise DimensionError(f"window length L={L} must satisfy 1 <= L <= N={N}")
        n = L if order_bound is None else int(order_bound)
        pe_order = L + 1 + n
        if pe_order <= len(u):
            report = check_persistent_excitation(u, pe_order, rank_tol)
        else:
            report = PEReport(rank=0, required=pe_order, satisfied=False)
        if require_pe and not report.satisfied:
            raise NotPersistentlyExcitingError(
                f"input rank {report.rank} < required {report.required} (order L+1+n)"
            )
        Hu, Hy = build_hankel(u[:-1], L), build_hankel(y[:-1], L)
        Hu_s, Hy_s = build_hankel(u[1:], L), build_hankel(y[1:], L)
        pinv = truncated_pinv(np.vstack([Hu, Hy]), svd_rtol)
        predictor = Hy_s[-1] @ pinv
        for a in (Hu, Hy, Hu_s, Hy_s, pinv, predictor):
            a.setflags(write=False)
        return cls(Hu, Hy, Hu_s, Hy_s, L, pe_order, report, noisy, consistency_tol,
                   pinv, predictor)

    @classmethod
    def from_trajectory(cls, traj, L, **kwargs):
        return cls.from_data(traj.inputs, traj.outputs, L, **kwargs)

    @property
    def H(self):
        return np.vstack([self.Hu, self.Hy])

    @property
    def H_shift(self):
        return np.vstack([self.Hu_shift, self.Hy_shift])

    @property
    def n_cols(self):
        return self.Hu.shape[1]

    def predict_stacked(self, w):
        """One-step prediction from a stacked window ``[u; y]`` (no residual check)."""
        return float(self.predictor @ w)


def solve_alpha(sys, win):
    """Minimum-norm solution of ``[Hu; Hy] alpha = [u; y]``.

    Returns:
        ``(alpha, residual)`` where ``residual`` is the Euclidean norm of the
        equation error.

    Raises:
        DimensionError: if the window length differs from ``sys.L``.
        InconsistentTrajectoryError: if the residual exceeds
            ``sys.consistency_tol * max(1, |w|)`` on noise-free data.
    """
    if win.L != sys.L:
        raise DimensionError(f"window length {win.L} != model window length {sys.L}")
    w = win.stacked()
    alpha = sys.H_pinv @ w
    residual = float(np.linalg.norm(sys.H @ alpha - w))
    tol = sys.consistency_tol * max(1.0, float(np.linalg.norm(w)))
    if residual > tol:
        if sys.noisy:
            warnings.warn(f"window residual {residual:.3e} above {tol:.1e} (noisy data)",
                          RuntimeWarning, stacklevel=2)
        else:
            raise InconsistentTrajectoryError(residual, tol)
    return alpha, residual


def predict_next(sys, win):
    """Next output implied by the window: last entry of ``Hy_shift @ alpha``."""
    alpha, _ = solve_alpha(sys, win)
    return float(sys.Hy_shift[-1] @ alpha)


def data_driven_simulate(sys, init, input_source, steps, check=True, feedback=False):
    """Continue ``init`` for ``steps`` samples using only the data.

    At each step the window's successor output is predicted, the next input is
    obtained from ``input_source`` and the window slides by one sample.

    Args:
        sys: the data-driven model.
        init: initial window (a trajectory of the same system).
        input_source: callable ``t -> u_t`` or an array of ``steps`` inputs.
        steps: number of samples to generate.
        check: run the full minimum-norm solve with the consistency check at
            every step. When false the precomputed one-step predictor is used,
            which is algebraically identical.
        feedback: call ``input_source(t, y_t)`` with the output just
            predicted, which closes a loop around the data-driven model.

    Returns:
        Trajectory of the ``steps`` generated ``(u, y)`` pairs.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    if init.L != sys.L:
        raise DimensionError(f"window length {init.L} != model window length {sys.L}")
    if feedback and not callable(input_source):
        raise TypeError("feedback mode needs a callable input source")
    if not callable(input_source):
        u_seq = np.asarray(input_source, dtype=float).reshape(-1)
        if len(u_seq) < steps:
            raise DimensionError(f"input sequence has {len(u_seq)} samples, need {steps}")
        if not check:
            L = sys.L
            y = kernels.ddsim(sys.predictor[:L], sys.predictor[L:], init.u, init.y,
                              u_seq[:steps])
            bad = np.flatnonzero(~np.isfinite(y))
            if bad.size:
                raise SimulationDivergedError(int(bad[0]))
            return Trajectory(u_seq[:steps], y)
        source = u_seq.__getitem__
    else:
        source = input_source
    win = init.copy()
    us, ys = np.empty(steps), np.empty(steps)
    for t in range(steps):
        y_next = predict_next(sys, win) if check else sys.predict_stacked(win.stacked())
        u_next = float(source(t, y_next) if feedback else source(t))
        if not (np.isfinite(y_next) and np.isfinite(u_next)):
            raise SimulationDivergedError(t)
        us[t], ys[t] = u_next, y_next
        win.push(u_next, y_next)
    return Trajectory(us, ys)


@dataclass
class FreeResponse:
    alphas: np.ndarray
    windows: np.ndarray

    @property
    def window_norms(self):
        return np.linalg.norm(self.windows, axis=1)


def free_response_rollout(sys, alpha0, steps):
    """Iterate ``alpha_{t+1} = H^+ H' alpha_t`` (minimum-norm recursion).

    Returns:
        :class:`FreeResponse` with ``steps + 1`` coefficient vectors and the
        reconstructed stacked windows ``H alpha_t``.

    Raises:
        SimulationDivergedError: when the recursion overflows.
    """
    alpha = np.asarray(alpha0, dtype=float).reshape(-1)
    if len(alpha) != sys.n_cols:
        raise DimensionError(f"alpha0 has length {len(alpha)}, expected {sys.n_cols}")
    H, Hs, pinv = sys.H, sys.H_shift, sys.H_pinv
    alphas = np.empty((steps + 1, len(alpha)))
    alphas[0] = alpha
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            alpha = pinv @ (Hs @ alpha)
            if not np.all(np.isfinite(alpha)):
                raise SimulationDivergedError(t + 1, "alpha")
            alphas[t + 1] = alpha
    return FreeResponse(alphas, alphas @ H.T)


def stability_radius(sys):
    """Spectral radius of ``H^+ H'``.

    The nonzero spectrum of the ``(N-L+1)``-square matrix ``H^+ H'`` equals
    that of the ``2L``-square ``H' H^+``, which is what gets computed.
    """
    M = sys.H_shift @ sys.H_pinv
    if not np.any(M):
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def alpha_map_bound(sys):
    """Upper bound ``sqrt(1 + |z'|^2 |H^+|^2)`` on the spectral radius of ``H^+ H'``.

    ``z'`` is the last column of the shifted matrix. Valid whenever ``H`` has
    full row rank.
    """
    z_last = sys.H_shift[:, -1]
    pinv_norm = np.linalg.norm(sys.H_pinv, 2)
    return float(np.sqrt(1.0 + (z_last @ z_last) * pinv_norm**2))

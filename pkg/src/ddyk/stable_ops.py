"""Stable-by-construction operators for the Q parameter.

Three building blocks:

* :func:`stable_matrix` maps any finite ``(M_raw, T_raw)`` to a Schur-stable
  matrix ``A = T^{-1} U tanh(S) V^T T``.
* :class:`StableLinearOperator` is the LTI Q parameter built on it.
* :class:`StableNonlinearOperator` rescales a smooth network step so a convex
  Lyapunov function decreases by a factor ``beta`` at every transition.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

T_DIAG_FLOOR = 1e-6
SV_SCALE = 1.0 - 1e-6
# extra singular-value shrink per cond(T)^2; covers rounding in T^{-1} M T
COND_SHRINK = 1e-14
# beyond this T is singular to working precision
T_COND_MAX = 1e14
GAMMA_GUARD = 1e-12


class ParameterizationError(ValueError):
    """Raised when a parameter record cannot produce a valid operator."""


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- stable matrices ---------------------------------------------------------

@dataclass
class StableMatrixParams:
    """Unconstrained parameters of a Schur-stable matrix.

    Attributes:
        M_raw: ``n x n`` free matrix; its singular values are squashed by tanh.
        T_raw: ``n x n``; only the lower triangle is used, the diagonal is
            mapped through softplus plus a small floor.
    """

    M_raw: np.ndarray
    T_raw: np.ndarray

    def __post_init__(self):
        self.M_raw = np.atleast_2d(np.asarray(self.M_raw, dtype=float))
        self.T_raw = np.tril(np.atleast_2d(np.asarray(self.T_raw, dtype=float)))
        n = self.M_raw.shape[0]
        if n < 1 or self.M_raw.shape != (n, n) or self.T_raw.shape != (n, n):
            raise ParameterizationError(
                f"M_raw and T_raw must be square of equal size, got {self.M_raw.shape}, "
                f"{self.T_raw.shape}")
        if not (np.all(np.isfinite(self.M_raw)) and np.all(np.isfinite(self.T_raw))):
            raise ParameterizationError("stable-matrix parameters must be finite")

    @property
    def n(self):
        return self.M_raw.shape[0]

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)), np.zeros((n, n)))

    @classmethod
    def random(cls, n, rng, scale=1.0):
        return cls(scale * rng.standard_normal((n, n)), rng.standard_normal((n, n)))

    def T(self):
        """Lower-triangular scaling with strictly positive diagonal."""
        T = np.tril(self.T_raw, -1)
        T[np.diag_indices(self.n)] = softplus(np.diag(self.T_raw)) + T_DIAG_FLOOR
        return T

    def M(self):
        """Contraction ``U c tanh(S) V^T`` from the SVD of ``M_raw`` with ``c = sv_scale(T)``."""
        U, s, Vt = np.linalg.svd(self.M_raw)
        return (U * (sv_scale(self.T()) * np.tanh(s))) @ Vt

    def to_vector(self):
        il = np.tril_indices(self.n)
        return np.concatenate([self.M_raw.ravel(), self.T_raw[il]])

    @classmethod
    def from_vector(cls, v, n):
        v = np.asarray(v, dtype=float)
        k = n * (n + 1) // 2
        if v.size != n * n + k:
            raise ParameterizationError(f"expected {n * n + k} values, got {v.size}")
        T_raw = np.zeros((n, n))
        T_raw[np.tril_indices(n)] = v[n * n:]
        return cls(v[:n * n].reshape(n, n), T_raw)

    @staticmethod
    def size(n):
        return n * n + n * (n + 1) // 2


def sv_scale(T):
    """Singular-value cap ``(1 - 1e-6) / (1 + 1e-14 cond(T)^2)``.

    Forming ``T^{-1} M T`` explicitly perturbs the spectrum by roughly
    ``cond(T)^2`` times the unit roundoff; the cap keeps the computed spectral
    radius below one for every finite parameter value. For moderately
    conditioned ``T`` it is indistinguishable from ``1 - 1e-6``.
    """
    c = np.linalg.cond(T)
    if not np.isfinite(c):
        return 0.0
    return SV_SCALE / (1.0 + COND_SHRINK * c * c)


def stable_matrix(params):
    """Schur-stable ``A_q = T^{-1} M T`` for any finite parameter record.

    ``P = T^{-1} T^{-T}`` certifies stability: ``A P A^T - P = T^{-1}(M M^T - I) T^{-T}``
    which is negative definite because ``||M|| < 1``.

    Raises:
        ParameterizationError: if ``T`` is numerically singular.
    """
    T = params.T()
    if not np.linalg.cond(T) < T_COND_MAX:
        raise ParameterizationError("scaling matrix T is numerically singular")
    M = params.M()
    # T^{-1} (M T) via triangular solve
    return linalg.solve_triangular(T, M @ T, lower=True)


def lyapunov_certificate(params):
    """``(A, P)`` with ``P = T^{-1} T^{-T}`` for the LMI check."""
    T = params.T()
    Ti = linalg.solve_triangular(T, np.eye(params.n), lower=True)
    return stable_matrix(params), Ti @ Ti.T


def lmi_max_eig(A, params):
    """Largest eigenvalue of ``A P A^T - P`` after congruence with ``T``.

    ``T (A P A^T - P) T^T = (T A T^{-1})(T A T^{-1})^T - I`` has the same
    inertia as the LMI but stays well conditioned when ``P`` is not, so its
    sign is reliable in floating point. ``A`` is taken as given (not rebuilt).
    """
    T = params.T()
    X = linalg.solve_triangular(T, (T @ A).T, lower=True, trans="T").T
    return float(np.max(np.linalg.eigvalsh(X @ X.T - np.eye(params.n))))


def from_matrix(A):
    """Parameters reproducing a given Schur-stable matrix.

    With ``rho_1 = (1 + rho(A)) / 2`` solve ``(A/rho_1) P (A/rho_1)^T - P = -I``,
    factor ``P^{-1} = T^T T`` with ``T`` lower triangular, and recover
    ``M = T A T^{-1}``, which satisfies ``||M|| <= rho_1``.

    Raises:
        ParameterizationError: if ``A`` is not Schur stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if not rho < 1.0:
        raise ParameterizationError("matrix is not Schur stable")
    rho1 = 0.5 * (1.0 + rho)
    P = linalg.solve_discrete_lyapunov(A / rho1, np.eye(n))
    P = 0.5 * (P + P.T)
    J = np.eye(n)[::-1]
    try:
        R = np.linalg.cholesky(J @ np.linalg.inv(P) @ J)
    except np.linalg.LinAlgError as exc:
        raise ParameterizationError("Lyapunov solution is not positive definite") from exc
    T = J @ R.T @ J
    # normalize the scale so the diagonal of T sits near softplus(0)
    T *= np.log(2.0) / np.exp(np.mean(np.log(np.diag(T))))
    M = T @ np.linalg.solve(T.T, A.T).T
    U, s, Vt = np.linalg.svd(M)
    c = sv_scale(T)
    if s[0] >= c:
        raise ParameterizationError("matrix is too close to the stability boundary")
    M_raw = (U * np.arctanh(s / c)) @ Vt
    T_raw = np.tril(T, -1)
    T_raw[np.diag_indices(n)] = softplus_inv(np.maximum(np.diag(T) - T_DIAG_FLOOR, 1e-300))
    return StableMatrixParams(M_raw, T_raw)


# -- LTI Q -------------------------------------------------------------------

@dataclass
class StableLinearOperator:
    """``z+ = A_q z + B_q r``, ``u = C_q z + D_q r`` with ``A_q`` Schur stable."""

    params: StableMatrixParams
    B_q: np.ndarray
    C_q: np.ndarray
    D_q: float = 0.0
    z: np.ndarray = None
    A_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.params.n
        self.B_q = np.asarray(self.B_q, dtype=float).reshape(n)
        self.C_q = np.asarray(self.C_q, dtype=float).reshape(n)
        self.D_q = float(self.D_q)
        self.A_q = stable_matrix(self.params)
        self.z = np.zeros(n) if self.z is None else np.asarray(self.z, dtype=float).reshape(n)

    @property
    def n(self):
        return self.params.n

    @classmethod
    def random(cls, n, rng, scale=1.0, io_scale=1.0):
        return cls(StableMatrixParams.random(n, rng, scale),
                   io_scale * rng.standard_normal(n), io_scale * rng.standard_normal(n),
                   io_scale * rng.standard_normal())

    @classmethod
    def zero(cls, n=1):
        return cls(StableMatrixParams.zeros(n), np.zeros(n), np.zeros(n), 0.0)

    @classmethod
    def from_realization(cls, A, B, C, D=0.0):
        return cls(from_matrix(A), B, C, D)

    def reset(self):
        self.z = np.zeros(self.n)

    def step(self, r_hat):
        return q_lti_step(self, r_hat)

    def impulse_response(self, T):
        """``h_0 = D``, ``h_t = C A^{t-1} B``."""
        h = np.empty(T)
        x = self.B_q.copy()
        h[0] = self.D_q
        for t in range(1, T):
            h[t] = self.C_q @ x
            x = self.A_q @ x
        return h

    def to_vector(self):
        return np.concatenate([self.params.to_vector(), self.B_q, self.C_q, [self.D_q]])

    def from_vector(self, v):
        """New operator (zero state) with the same shape and parameters ``v``."""
        n = self.n
        k = StableMatrixParams.size(n)
        v = np.asarray(v, dtype=float)
        if v.size != k + 2 * n + 1:
            raise ParameterizationError(f"expected {k + 2 * n + 1} values, got {v.size}")
        return StableLinearOperator(StableMatrixParams.from_vector(v[:k], n),
                                    v[k:k + n], v[k + n:k + 2 * n], v[-1])

    def copy(self):
        op = self.from_vector(self.to_vector())
        op.z = self.z.copy()
        return op


def q_lti_step(op, r_hat):
    """``u = C_q z + D_q r_hat`` then ``z <- A_q z + B_q r_hat``."""
    u = float(op.C_q @ op.z) + op.D_q * r_hat
    op.z = op.A_q @ op.z + op.B_q * r_hat
    return u


# -- Lyapunov functions and networks -----------------------------------------

class QuadraticLyapunov:
    """``V(z) = z^T P z``; a convenient closed-form candidate."""

    def __init__(self, P):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.einsum("...i,ij,...j->...", z, self.P, z)

    def to_vector(self):
        return np.zeros(0)

    def from_vector(self, v):
        return self


class LyapunovNet:
    """Input-convex network made into a Lyapunov candidate.

    ``g(z) = softplus(u2)^T h2``, ``h2 = softplus(softplus(U1) h1 + W1 z + b1)``,
    ``h1 = softplus(W0 z + b0)``. Hidden-to-hidden weights are nonnegative, so
    ``g`` is convex. The candidate subtracts the tangent plane of ``g`` at the
    origin, which keeps convexity and gives ``V(0) = 0`` and
    ``V(z) >= eps_quad ||z||^2``.
    """

    def __init__(self, n, width=16, eps_quad=1e-3, rng=None, weights=None):
        self.n = int(n)
        self.width = int(width)
        self.eps_quad = float(eps_quad)
        if not self.eps_quad > 0:
            raise ValueError("eps_quad must be positive")
        if weights is None:
            rng = rng or np.random.default_rng(0)
            w = self.width
            weights = [rng.standard_normal((w, n)) / np.sqrt(n), 0.1 * rng.standard_normal(w),
                       rng.standard_normal((w, w)) - 2.0, rng.standard_normal((w, n)) / np.sqrt(n),
                       0.1 * rng.standard_normal(w), rng.standard_normal(w) - 1.0]
        self.W0, self.b0, self.U1_raw, self.W1, self.b1, self.u2_raw = (
            np.asarray(a, dtype=float) for a in weights)
        self._refresh()

    def _refresh(self):
        self.U1 = softplus(self.U1_raw)
        self.u2 = softplus(self.u2_raw)
        a0 = self.b0
        h1 = softplus(a0)
        a1 = self.U1 @ h1 + self.b1
        self._g0 = float(self.u2 @ softplus(a1))
        d1 = _sigmoid(a1) * self.u2
        self._grad0 = (d1 @ self.U1 * _sigmoid(a0)) @ self.W0 + d1 @ self.W1

    def g(self, z):
        z = np.asarray(z, dtype=float)
        h1 = softplus(z @ self.W0.T + self.b0)
        h2 = softplus(h1 @ self.U1.T + z @ self.W1.T + self.b1)
        return h2 @ self.u2

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return lyapunov_eval(self, z)

    def to_vector(self):
        return np.concatenate([a.ravel() for a in (self.W0, self.b0, self.U1_raw, self.W1,
                                                   self.b1, self.u2_raw)])

    def from_vector(self, v):
        n, w = self.n, self.width
        shapes = [(w, n), (w,), (w, w), (w, n), (w,), (w,)]
        parts, i = [], 0
        for s in shapes:
            k = int(np.prod(s))
            parts.append(np.asarray(v[i:i + k], dtype=float).reshape(s))
            i += k
        if i != len(v):
            raise ParameterizationError(f"expected {i} values, got {len(v)}")
        return LyapunovNet(n, w, self.eps_quad, weights=parts)


def lyapunov_eval(V, z):
    """``g(z) - g(0) - grad g(0) . z + eps_quad ||z||^2`` (batched over leading axes).

    Clipped at zero to absorb rounding; the exact value is nonnegative.
    """
    z = np.asarray(z, dtype=float)
    val = V.g(z) - V._g0 - z @ V._grad0 + V.eps_quad * np.sum(z * z, axis=-1)
    return np.maximum(val, V.eps_quad * np.sum(z * z, axis=-1))


class Mlp:
    """Smooth ``n -> n`` network: two tanh hidden layers and a linear output.

    With ``centered=True`` the output at the origin is subtracted so ``f(0) = 0``.
    """

    def __init__(self, n, width=16, rng=None, weights=None, centered=True, gain=0.5):
        self.n, self.width, self.centered = int(n), int(width), bool(centered)
        if weights is None:
            rng = rng or np.random.default_rng(0)
            w = self.width
            weights = [rng.standard_normal((w, n)) / np.sqrt(n), 0.1 * rng.standard_normal(w),
                       rng.standard_normal((w, w)) / np.sqrt(w), 0.1 * rng.standard_normal(w),
                       gain * rng.standard_normal((n, w)) / np.sqrt(w), np.zeros(n)]
        self.weights = [np.asarray(a, dtype=float) for a in weights]
        self._f0 = self._raw(np.zeros(self.n)) if self.centered else 0.0

    def _raw(self, z):
        W1, b1, W2, b2, W3, b3 = self.weights
        h = np.tanh(z @ W1.T + b1)
        h = np.tanh(h @ W2.T + b2)
        return h @ W3.T + b3

    def __call__(self, z):
        return self._raw(np.asarray(z, dtype=float)) - self._f0

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.weights])

    def from_vector(self, v):
        parts, i = [], 0
        for a in self.weights:
            parts.append(np.asarray(v[i:i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        if i != len(v):
            raise ParameterizationError(f"expected {i} values, got {len(v)}")
        return Mlp(self.n, self.width, weights=parts, centered=self.centered)


# -- nonlinear Q ---------------------------------------------------------------

def stable_step(op, z):
    """``z' = gamma f_hat(z)`` with ``gamma = min(1, beta V(z) / V(f_hat(z)))``.

    Convexity of ``V`` and ``V(0) = 0`` give ``V(z') <= beta V(z)``.
    """
    z = np.asarray(z, dtype=float)
    fz = np.asarray(op.f_hat(z), dtype=float)
    vf = float(op.V(fz))
    bv = op.beta * float(op.V(z))
    if vf < GAMMA_GUARD:
        return np.zeros_like(fz) if bv < GAMMA_GUARD else fz
    gamma = (bv - max(bv - vf, 0.0)) / vf
    return fz if gamma >= 1.0 else gamma * fz


@dataclass
class StableNonlinearOperator:
    """Control-affine Q: ``z+ = stable_step(z) + B_q r``, ``u = C_q z + D_q r``."""

    f_hat: object
    V: object
    B_q: np.ndarray
    C_q: np.ndarray
    D_q: float = 0.0
    beta: float = 0.99
    z: np.ndarray = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ParameterizationError(f"beta must lie in (0, 1), got {self.beta}")
        n = np.asarray(self.B_q).size
        self.B_q = np.asarray(self.B_q, dtype=float).reshape(n)
        self.C_q = np.asarray(self.C_q, dtype=float).reshape(n)
        self.D_q = float(self.D_q)
        self.z = np.zeros(n) if self.z is None else np.asarray(self.z, dtype=float).reshape(n)

    @property
    def n(self):
        return self.B_q.size

    @classmethod
    def random(cls, n, rng, width=16, v_width=16, beta=0.99, io_scale=1.0, eps_quad=1e-3):
        return cls(Mlp(n, width, rng=rng), LyapunovNet(n, v_width, eps_quad, rng=rng),
                   io_scale * rng.standard_normal(n), io_scale * rng.standard_normal(n),
                   io_scale * rng.standard_normal(), beta)

    def reset(self):
        self.z = np.zeros(self.n)

    def step(self, r_hat):
        return q_nonlinear_step(self, r_hat)

    def to_vector(self):
        """Flat parameters: ``B_q, C_q, D_q``, then ``f_hat`` and ``V`` weights."""
        return np.concatenate([self.B_q, self.C_q, [self.D_q], self.f_hat.to_vector(),
                               self.V.to_vector()])

    def from_vector(self, v):
        v = np.asarray(v, dtype=float)
        n = self.n
        nf = self.f_hat.to_vector().size
        nv = self.V.to_vector().size
        if v.size != 2 * n + 1 + nf + nv:
            raise ParameterizationError(f"expected {2 * n + 1 + nf + nv} values, got {v.size}")
        i = 2 * n + 1
        return StableNonlinearOperator(self.f_hat.from_vector(v[i:i + nf]),
                                       self.V.from_vector(v[i + nf:]),
                                       v[:n], v[n:2 * n], v[2 * n], self.beta)

    def copy(self):
        op = self.from_vector(self.to_vector())
        op.z = self.z.copy()
        return op


def q_nonlinear_step(op, r_hat):
    """``u = C_q z + D_q r_hat`` then ``z <- stable_step(z) + B_q r_hat``."""
    u = float(op.C_q @ op.z) + op.D_q * r_hat
    op.z = stable_step(op, op.z) + op.B_q * r_hat
    return u

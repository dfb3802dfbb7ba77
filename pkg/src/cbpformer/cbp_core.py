"""Composite Bernstein polynomials.

A composite curve is K Bernstein polynomials of degree N laid end to end on
the knots ``t_0 < t_1 < ... < t_K``.  Segment ``k`` (0-based) lives on
``[knots[k], knots[k + 1]]`` and owns ``N + 1`` control points, so the whole
curve carries ``M + 1 = K (N + 1)`` control points stored segment-major.

Continuity at the knots is *not* enforced by the type; use
:func:`knot_continuity_residual` to measure it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import AlignmentError, DegreeError, DomainError

__all__ = [
    "CompositeBernstein",
    "binomial",
    "basis_eval",
    "basis_matrix",
    "evaluate",
    "derivative",
    "integral",
    "elevation_matrix",
    "elevate",
    "product",
    "coeff_bounds",
    "knot_continuity_residual",
    "differentiation_matrix",
    "uniform_knots",
    "to_text",
    "from_text",
]

_MAX_DEGREE = 60


def binomial(n: int, k: int) -> float:
    """C(n, k) by multiplicative recurrence in floating point."""
    if k < 0 or k > n:
        return 0.0
    k = min(k, n - k)
    c = 1.0
    for i in range(1, k + 1):
        c = c * (n - k + i) / i
    return c


@lru_cache(maxsize=None)
def _binomial_row(n: int) -> NDArray[np.float64]:
    row = np.array([binomial(n, j) for j in range(n + 1)])
    row.setflags(write=False)
    return row


def _check_knots(knots: ArrayLike) -> NDArray[np.float64]:
    t = np.array(knots, dtype=np.float64).reshape(-1)
    if t.size < 2:
        raise ValueError("need at least two knots (K >= 1)")
    if not np.all(np.isfinite(t)):
        raise ValueError("knots must be finite")
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("knots must be strictly increasing")
    return t


def uniform_knots(t_final: float, K: int, t_start: float = 0.0) -> NDArray[np.float64]:
    return np.linspace(t_start, t_final, K + 1)


@dataclass(frozen=True, eq=False)
class CompositeBernstein:
    """Vector-valued composite Bernstein curve.

    Parameters
    ----------
    knots : array_like, shape (K + 1,)
        Strictly increasing time knots.
    coeffs : array_like, shape (K, N + 1, dim)
        Control points, segment-major.  A 2-D array ``(K, N + 1)`` is taken
        as a scalar curve (``dim == 1``).
    """

    knots: NDArray[np.float64]
    coeffs: NDArray[np.float64]

    def __post_init__(self):
        knots = _check_knots(self.knots)
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim == 2:
            c = c[:, :, None]
        if c.ndim != 3:
            raise ValueError("coeffs must have shape (K, N+1, dim)")
        if c.shape[0] != knots.size - 1:
            raise ValueError(
                f"{c.shape[0]} segments of coefficients for {knots.size - 1} knot intervals"
            )
        if c.shape[1] < 1 or c.shape[2] < 1:
            raise ValueError("empty coefficient block")
        knots.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_flat(cls, knots: ArrayLike, flat: ArrayLike, degree: int) -> "CompositeBernstein":
        """Build from the flattened ``(M + 1, dim)`` control-point sequence."""
        knots = _check_knots(knots)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim == 1:
            flat = flat[:, None]
        K = knots.size - 1
        if flat.shape[0] != K * (degree + 1):
            raise ValueError(
                f"expected {K * (degree + 1)} control points, got {flat.shape[0]}"
            )
        return cls(knots, flat.reshape(K, degree + 1, flat.shape[1]))

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    @property
    def M(self) -> int:
        return self.K * (self.degree + 1) - 1

    @property
    def flat(self) -> NDArray[np.float64]:
        """Control points as an ``(M + 1, dim)`` array in segment-major order."""
        return self.coeffs.reshape(-1, self.dim)

    @property
    def widths(self) -> NDArray[np.float64]:
        return np.diff(self.knots)

    def with_coeffs(self, coeffs: ArrayLike) -> "CompositeBernstein":
        return CompositeBernstein(self.knots, coeffs)

    def __call__(self, t):
        return evaluate(self, t)

    def __repr__(self):
        return (
            f"CompositeBernstein(K={self.K}, N={self.degree}, dim={self.dim}, "
            f"t=[{self.knots[0]:g}, {self.knots[-1]:g}])"
        )


def basis_eval(j: int, N: int, k: int, knots: ArrayLike, t: float) -> float:
    """Bernstein basis ``b_{j,N}`` of segment ``k`` (0-based) at time ``t``."""
    knots = _check_knots(knots)
    if not 0 <= k < knots.size - 1:
        raise IndexError(f"segment index {k} out of range")
    if not 0 <= j <= N:
        raise IndexError(f"basis index {j} not in [0, {N}]")
    a, b = knots[k], knots[k + 1]
    if not a <= t <= b:
        raise DomainError(f"t={t} outside segment [{a}, {b}]")
    s = (t - a) / (b - a)
    return binomial(N, j) * s**j * (1.0 - s) ** (N - j)


def basis_matrix(N: int, s: ArrayLike) -> NDArray[np.float64]:
    """All degree-N basis values at local parameters ``s`` in [0, 1].

    Returns an array of shape ``(len(s), N + 1)``.
    """
    s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
    j = np.arange(N + 1)
    return _binomial_row(N) * s**j * (1.0 - s) ** (N - j)


def _locate(knots: NDArray[np.float64], t: NDArray[np.float64]) -> NDArray[np.intp]:
    # interior knots belong to the segment on their right
    k = np.searchsorted(knots, t, side="right") - 1
    return np.clip(k, 0, knots.size - 2)


def evaluate(curve: CompositeBernstein, t) -> NDArray[np.float64]:
    """Evaluate the curve.

    A scalar ``t`` gives a ``(dim,)`` point; an array gives ``(len(t), dim)``.
    """
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=np.float64))
    lo, hi = curve.knots[0], curve.knots[-1]
    if np.any(tt < lo) or np.any(tt > hi) or not np.all(np.isfinite(tt)):
        raise DomainError(f"t outside curve domain [{lo}, {hi}]")
    k = _locate(curve.knots, tt)
    a = curve.knots[k]
    s = (tt - a) / (curve.knots[k + 1] - a)
    B = basis_matrix(curve.degree, s)
    out = np.einsum("sj,sjd->sd", B, curve.coeffs[k])
    return out[0] if scalar else out


def derivative(curve: CompositeBernstein) -> CompositeBernstein:
    """Time derivative as a degree ``N - 1`` composite curve.

    Per segment this is the product with the ``(N + 1) x N`` differentiation
    matrix, i.e. ``N / h_k * (x_{j+1} - x_j)``.
    """
    N = curve.degree
    if N < 1:
        raise DegreeError("cannot differentiate a degree-0 curve")
    h = curve.widths[:, None, None]
    return curve.with_coeffs(N / h * np.diff(curve.coeffs, axis=1))


def integral(curve: CompositeBernstein) -> NDArray[np.float64]:
    """Exact definite integral over ``[t_0, t_K]``."""
    w = curve.widths / (curve.degree + 1)
    return np.einsum("k,kd->d", w, curve.coeffs.sum(axis=1))


@lru_cache(maxsize=256)
def elevation_matrix(N: int, N_e: int) -> NDArray[np.float64]:
    """``(N + 1) x (N_e + 1)`` matrix taking degree-N coefficients to degree N_e."""
    if N_e <= N:
        raise DegreeError(f"target degree {N_e} must exceed {N}")
    if N_e > 4 * _MAX_DEGREE:
        raise DegreeError(f"degree {N_e} too large for float binomials")
    r = N_e - N
    E = np.zeros((N + 1, N_e + 1))
    cN, cr, cNe = _binomial_row(N), _binomial_row(r), _binomial_row(N_e)
    for i in range(N + 1):
        for j in range(r + 1):
            E[i, i + j] = cr[j] * cN[i] / cNe[i + j]
    E.setflags(write=False)
    return E


def elevate(curve: CompositeBernstein, N_e: int) -> CompositeBernstein:
    E = elevation_matrix(curve.degree, N_e)
    return curve.with_coeffs(np.einsum("kid,ie->ked", curve.coeffs, E))


def _same_knots(a: CompositeBernstein, b: CompositeBernstein) -> bool:
    return a.knots.shape == b.knots.shape and np.array_equal(a.knots, b.knots)


def product(a: CompositeBernstein, b: CompositeBernstein) -> CompositeBernstein:
    """Pointwise product of two scalar curves on the same knots."""
    if not _same_knots(a, b):
        raise AlignmentError("product requires identical knots")
    if a.dim != 1 or b.dim != 1:
        raise ValueError("product is defined for scalar curves")
    Na, Nb = a.degree, b.degree
    ca, cb = _binomial_row(Na), _binomial_row(Nb)
    cab = _binomial_row(Na + Nb)
    # scaled outer products, then anti-diagonal sums
    A = a.coeffs[:, :, 0] * ca
    B = b.coeffs[:, :, 0] * cb
    out = np.zeros((a.K, Na + Nb + 1))
    for i in range(Na + 1):
        out[:, i : i + Nb + 1] += A[:, i : i + 1] * B
    return a.with_coeffs(out / cab)


def coeff_bounds(curve: CompositeBernstein) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Componentwise (min, max) over all control points.

    By the convex hull property the curve never leaves this box.
    """
    flat = curve.flat
    return flat.min(axis=0), flat.max(axis=0)


def knot_continuity_residual(curve: CompositeBernstein) -> list[NDArray[np.float64]]:
    """Last point of segment k minus first point of segment k + 1, for each interior knot."""
    c = curve.coeffs
    return [c[k, -1] - c[k + 1, 0] for k in range(curve.K - 1)]


def differentiation_matrix(N: int, knots: ArrayLike) -> NDArray[np.float64]:
    """Composite ``(M + 1) x (M + 1)`` differentiation matrix.

    Block ``k`` is the per-segment differentiation matrix followed by
    elevation from degree ``N - 1`` back to ``N``, so that row-vector
    control points ``x`` map to ``x @ D`` = control points of the derivative
    expressed at degree N.  Segments are not coupled.
    """
    if N < 1:
        raise DegreeError("differentiation needs N >= 1")
    knots = _check_knots(knots)
    K = knots.size - 1
    D = np.zeros((K * (N + 1), K * (N + 1)))
    E = elevation_matrix(N - 1, N)
    for k in range(K):
        h = knots[k + 1] - knots[k]
        Dk = np.zeros((N + 1, N))
        idx = np.arange(N)
        Dk[idx, idx] = -N / h
        Dk[idx + 1, idx] = N / h
        s = k * (N + 1)
        D[s : s + N + 1, s : s + N + 1] = Dk @ E
    return D


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_text(curve: CompositeBernstein) -> str:
    """Serialize as ``CBP dim K N t_0 ... t_K`` followed by one line per control point."""
    head = ["CBP", str(curve.dim), str(curve.K), str(curve.degree)]
    head += [_fmt(t) for t in curve.knots]
    lines = [" ".join(head)]
    lines += [" ".join(_fmt(v) for v in row) for row in curve.flat]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> CompositeBernstein:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "CBP":
        raise ValueError("not a CBP record")
    dim, K, N = int(head[1]), int(head[2]), int(head[3])
    knots = np.array([float(v) for v in head[4:]])
    if knots.size != K + 1:
        raise ValueError("knot count does not match K")
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    if rows.shape != (K * (N + 1), dim):
        raise ValueError(f"expected {K * (N + 1)}x{dim} control points, got {rows.shape}")
    return CompositeBernstein.from_flat(knots, rows, N)

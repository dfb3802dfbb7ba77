"""Analytic ground truth for both problems and the training-set builder.

The brachistochrone optimum is a cycloid; the minimum-time single-integrator
path around one disc is the shortest tangent-arc-tangent curve traversed at
constant speed.  :func:`build_dataset` samples parameters, solves them
analytically, fits composite Bernstein control points and normalizes the
resulting token sequences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import dijkstra

from . import cbp_core as cbp
from . import problems as pb
from .cbp_core import CompositeBernstein
from .errors import ArgumentError, ConfigurationError, FitError, ParameterError

log = logging.getLogger(__name__)

# The obstacle oracle keeps a little slack from the constraint boundaries so
# that its Bernstein fit certifies: paths wrap a disc of radius
# sqrt(d) + CLEARANCE_MARGIN and run at SPEED_FRACTION * u_max.
CLEARANCE_MARGIN = 0.05
SPEED_FRACTION = 0.95
ENDPOINT_BUFFER = 0.2

DEFAULT_RANGES = {
    pb.BRACHISTOCHRONE: {"theta1": [0.5, 4.0], "theta2": [0.5, 3.0]},
    pb.OBSTACLE: {"box": [0.0, 10.0], "min_distance": 3.0, "max_offset": 1.5},
}


# -- brachistochrone --------------------------------------------------------


@dataclass(frozen=True)
class CycloidSolution:
    """Cycloid ``x = a (phi - sin phi)``, ``y = a (1 - cos phi)`` for ``phi`` in ``[0, phi1]``."""

    a: float
    phi1: float
    travel_time: float

    def point(self, phi):
        phi = np.asarray(phi, dtype=np.float64)
        return self.a * (phi - np.sin(phi)), self.a * (1.0 - np.cos(phi))

    def phi_of_x(self, x: ArrayLike) -> NDArray[np.float64]:
        # x(phi) is strictly increasing on (0, 2 pi); vectorized bisection
        x = np.asarray(x, dtype=np.float64)
        lo = np.zeros_like(x)
        hi = np.full_like(x, self.phi1)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = self.a * (mid - np.sin(mid)) < x
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def y_of_x(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.a * (1.0 - np.cos(self.phi_of_x(x)))


def solve_brachistochrone(theta: ArrayLike, g: float = pb.GRAVITY) -> CycloidSolution:
    """Cycloid through the origin and ``(theta_1, theta_2)`` (depth positive downward)."""
    th1, th2 = (float(v) for v in np.asarray(theta, dtype=np.float64)[:2])
    if not (th1 > 0 and th2 > 0):
        raise ParameterError("brachistochrone needs theta_1 > 0 and theta_2 > 0")
    ratio = th2 / th1

    def f(phi):
        return (1.0 - math.cos(phi)) / (phi - math.sin(phi)) - ratio

    # f decreases from +inf (phi -> 0) to -ratio (phi = 2 pi)
    lo, hi = 1e-6, 2.0 * math.pi
    if not (f(lo) > 0 > f(hi)):
        raise ParameterError(f"cannot bracket the rolling angle for theta={theta}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    phi1 = 0.5 * (lo + hi)
    a = th2 / (1.0 - math.cos(phi1))
    return CycloidSolution(a, phi1, phi1 * math.sqrt(a / g))


# -- obstacle ---------------------------------------------------------------


@dataclass(frozen=True)
class Line:
    p: NDArray[np.float64]
    q: NDArray[np.float64]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.q - self.p))

    def at(self, s):
        L = self.length
        f = np.zeros_like(s) if L == 0 else s / L
        return self.p + f[:, None] * (self.q - self.p)

    def tangent_at(self, s):
        L = self.length
        d = np.zeros(2) if L == 0 else (self.q - self.p) / L
        return np.tile(d, (np.size(s), 1))

    @property
    def start(self):
        return self.p

    @property
    def end(self):
        return self.q


@dataclass(frozen=True)
class Arc:
    center: NDArray[np.float64]
    radius: float
    angle_start: float
    angle_end: float
    orientation: int  # +1 counter-clockwise, -1 clockwise

    @property
    def sweep(self) -> float:
        return abs(self.angle_end - self.angle_start)

    @property
    def length(self) -> float:
        return self.radius * self.sweep

    def at(self, s):
        ang = self.angle_start + self.orientation * s / self.radius
        return self.center + self.radius * np.column_stack([np.cos(ang), np.sin(ang)])

    def tangent_at(self, s):
        ang = self.angle_start + self.orientation * s / self.radius
        return self.orientation * np.column_stack([-np.sin(ang), np.cos(ang)])

    @property
    def start(self):
        return self.at(np.zeros(1))[0]

    @property
    def end(self):
        return self.at(np.array([self.length]))[0]


@dataclass(frozen=True)
class TangentArcPath:
    segments: tuple
    total_length: float
    side: str  # "upper", "lower" or "none"
    radius: float = 0.0
    center: NDArray[np.float64] = field(default_factory=lambda: np.zeros(2))

    def position(self, s: ArrayLike) -> NDArray[np.float64]:
        """Points at arc-length positions ``s`` (clipped to the path)."""
        return self._piecewise(s, "at")

    def _piecewise(self, s, method):
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=np.float64)), 0.0, self.total_length)
        out = np.empty((s.size, 2))
        offset = 0.0
        done = np.zeros(s.size, dtype=bool)
        for i, seg in enumerate(self.segments):
            last = i == len(self.segments) - 1
            mask = ~done & ((s <= offset + seg.length) | last)
            out[mask] = getattr(seg, method)(s[mask] - offset)
            done |= mask
            offset += seg.length
        return out

    def tangent(self, s: ArrayLike) -> NDArray[np.float64]:
        """Unit tangents at arc-length positions ``s``."""
        return self._piecewise(s, "tangent_at")


def _segment_clears(p, q, c, r) -> bool:
    """True if the closed segment p-q stays outside the open disc (c, r)."""
    d = q - p
    dd = float(d @ d)
    lam = 0.0 if dd == 0 else float(np.clip((c - p) @ d / dd, 0.0, 1.0))
    return float(np.linalg.norm(p + lam * d - c)) >= r


def shortest_path_around_disc(start, goal, center, radius) -> TangentArcPath:
    """Shortest planar path from ``start`` to ``goal`` avoiding the open disc."""
    S, G, C = (np.asarray(v, dtype=np.float64) for v in (start, goal, center))
    r = float(radius)
    dS, dG = np.linalg.norm(S - C), np.linalg.norm(G - C)
    if dS < r or dG < r:
        raise ParameterError("start or goal inside the obstacle")
    if _segment_clears(S, G, C, r):
        line = Line(S, G)
        return TangentArcPath((line,), line.length, "none", r, C)
    aS = math.atan2(*(S - C)[::-1])
    aG = math.atan2(*(G - C)[::-1])
    bS = math.acos(min(1.0, r / dS))
    bG = math.acos(min(1.0, r / dG))
    best = None
    for rho in (1, -1):
        t0 = aS + rho * bS
        t1 = aG - rho * bG
        sweep = (rho * (t1 - t0)) % (2.0 * math.pi)
        PS = C + r * np.array([math.cos(t0), math.sin(t0)])
        PG = C + r * np.array([math.cos(t1), math.sin(t1)])
        segs = (Line(S, PS), Arc(C, r, t0, t0 + rho * sweep, rho), Line(PG, G))
        L = sum(s.length for s in segs)
        if best is None or L < best[0]:
            best = (L, segs)
    L, segs = best
    mid = segs[1].at(np.array([segs[1].length / 2]))[0]
    cross = (G - S)[0] * (mid - S)[1] - (G - S)[1] * (mid - S)[0]
    return TangentArcPath(segs, L, "upper" if cross > 0 else "lower", r, C)


def oracle_radius(constants: dict) -> float:
    return math.sqrt(constants["d"]) + CLEARANCE_MARGIN


def solve_obstacle_path(theta: ArrayLike, constants: dict | None = None) -> TangentArcPath:
    consts = dict(pb.DEFAULT_CONSTANTS[pb.OBSTACLE])
    consts.update(constants or {})
    th = np.asarray(theta, dtype=np.float64)
    return shortest_path_around_disc(th[0:2], th[2:4], th[4:6], oracle_radius(consts))


def visibility_graph_length(start, goal, center, radius, n_points: int = 400) -> float:
    """Brute-force shortest path over start, goal and a polygon circumscribing the disc."""
    S, G, C = (np.asarray(v, dtype=np.float64) for v in (start, goal, center))
    ang = 2.0 * np.pi * np.arange(n_points) / n_points
    R = radius / math.cos(math.pi / n_points)  # polygon edges touch the circle
    ring = C + R * np.column_stack([np.cos(ang), np.sin(ang)])
    P = np.vstack([S, G, ring])
    n = len(P)
    a = P[:, None, :]
    d = P[None, :, :] - a
    dd = np.sum(d * d, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.clip(np.sum((C - a) * d, axis=2) / dd, 0.0, 1.0)
    lam = np.nan_to_num(lam)
    closest = a + lam[:, :, None] * d
    dist = np.linalg.norm(closest - C, axis=2)
    W = np.sqrt(dd)
    visible = dist >= radius * (1.0 - 1e-12)
    np.fill_diagonal(visible, False)
    W = np.where(visible, W, 0.0)
    # zero entries are non-edges for csgraph; keep true zero-length edges tiny
    W[visible & (W == 0)] = 1e-300
    lengths = dijkstra(W, directed=False, indices=0)
    return float(lengths[1])


# -- fitting ----------------------------------------------------------------


def fit_control_points(
    trajectory, K: int, N: int, knots: ArrayLike, samples_per_degree: int = 20
) -> tuple[CompositeBernstein, float]:
    """Least-squares Bernstein fit with the segment endpoints interpolated.

    ``trajectory`` maps a 1-D array of times to an ``(n, dim)`` array.
    Returns the curve and the max sampled fit error (on 1000 points).
    """
    knots = np.asarray(knots, dtype=np.float64)
    if knots.size != K + 1:
        raise ValueError("knot count does not match K")
    s = np.linspace(0.0, 1.0, samples_per_degree * (N + 1))
    B = cbp.basis_matrix(N, s)
    inner = B[:, 1:-1]
    if N >= 2 and np.linalg.matrix_rank(inner) < N - 1:
        raise FitError("rank-deficient fitting matrix")
    ends = np.atleast_2d(np.asarray(trajectory(knots), dtype=np.float64).reshape(K + 1, -1))
    dim = ends.shape[1]
    coeffs = np.empty((K, N + 1, dim))
    for k in range(K):
        t = knots[k] + s * (knots[k + 1] - knots[k])
        vals = np.asarray(trajectory(t), dtype=np.float64).reshape(s.size, dim)
        c0, cN = ends[k], ends[k + 1]
        coeffs[k, 0], coeffs[k, -1] = c0, cN
        if N >= 2:
            rhs = vals - np.outer(B[:, 0], c0) - np.outer(B[:, -1], cN)
            coeffs[k, 1:-1] = np.linalg.lstsq(inner, rhs, rcond=None)[0]
    curve = CompositeBernstein(knots, coeffs)
    tt = np.linspace(knots[0], knots[-1], 1000)
    err = float(np.max(np.abs(curve(tt) - np.asarray(trajectory(tt)).reshape(tt.size, dim))))
    return curve, err


def brachistochrone_decision(
    instance: pb.ProblemInstance, sol: CycloidSolution | None = None
) -> tuple[pb.DecisionVector, float]:
    sol = sol or solve_brachistochrone(instance.theta, instance.constants["g"])
    cfg = instance.config
    knots = cfg.knots(instance.theta[0])
    curve, err = fit_control_points(lambda x: sol.y_of_x(x)[:, None], cfg.K, cfg.N, knots)
    return pb.DecisionVector(curve, None, float(instance.theta[0])), err


def fit_velocity_integral(
    velocity, start, goal, K: int, N: int, knots: ArrayLike, samples_per_degree: int = 20
) -> tuple[CompositeBernstein, CompositeBernstein, float]:
    """Fit a degree ``N - 1`` velocity curve and integrate it to degree-N states.

    The velocity interpolates its sampled values at the knots and its
    integral is constrained to equal ``goal - start`` (equality-constrained
    least squares).  The states therefore start and end exactly at the
    boundary points, are continuous, and differentiate exactly to the
    velocity.  Returns ``(states, velocity at degree N, max velocity fit error)``.
    """
    knots = np.asarray(knots, dtype=np.float64)
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    n = N - 1
    h = np.diff(knots)
    s = np.linspace(0.0, 1.0, samples_per_degree * (N + 1))
    B = cbp.basis_matrix(n, s)
    ends = np.asarray(velocity(knots), dtype=np.float64).reshape(K + 1, -1)
    dim = ends.shape[1]
    n_in = n - 1  # free coefficients per segment
    A = np.zeros((K * s.size, K * n_in))
    rhs = np.zeros((K * s.size, dim))
    C = np.zeros((1, K * n_in))
    e = (goal - start).reshape(1, dim).copy()
    for k in range(K):
        t = knots[k] + s * h[k]
        vals = np.asarray(velocity(t), dtype=np.float64).reshape(s.size, dim)
        rows = slice(k * s.size, (k + 1) * s.size)
        cols = slice(k * n_in, (k + 1) * n_in)
        A[rows, cols] = B[:, 1:-1]
        rhs[rows] = vals - np.outer(B[:, 0], ends[k]) - np.outer(B[:, -1], ends[k + 1])
        C[0, cols] = h[k] / N
        e -= h[k] / N * (ends[k] + ends[k + 1])
    kkt = np.block([[2.0 * A.T @ A, C.T], [C, np.zeros((1, 1))]])
    sol = np.linalg.solve(kkt, np.vstack([2.0 * A.T @ rhs, e]))
    free = sol[:-1].reshape(K, n_in, dim)
    ucoef = np.concatenate([ends[:-1, None, :], free, ends[1:, None, :]], axis=1)
    vel = CompositeBernstein(knots, ucoef)

    # antiderivative: x_{j+1} = x_j + h / N * u_j within each segment
    xcoef = np.empty((K, N + 1, dim))
    x0 = start.copy()
    for k in range(K):
        xcoef[k] = x0 + np.concatenate([np.zeros((1, dim)), np.cumsum(h[k] / N * ucoef[k], axis=0)])
        x0 = xcoef[k, -1]
    xcoef[-1, -1] = goal  # exact up to the round-off removed here
    states = CompositeBernstein(knots, xcoef)
    tt = np.linspace(knots[0], knots[-1], 1000)
    err = float(np.max(np.abs(vel(tt) - np.asarray(velocity(tt)).reshape(tt.size, dim))))
    return states, cbp.elevate(vel, N), err


def path_knot_fractions(path: TangentArcPath, K: int) -> NDArray[np.float64] | None:
    """Place knots at the line/arc junctions when the path has exactly K pieces."""
    if len(path.segments) != K or K < 2:
        return None
    cum = np.cumsum([s.length for s in path.segments])[:-1] / path.total_length
    # very short pieces are widened so the knots survive token decoding unchanged
    return sanitize_fractions(cum)


def obstacle_decision(
    instance: pb.ProblemInstance, path: TangentArcPath | None = None
) -> tuple[pb.DecisionVector, float]:
    """Fit the oracle path traversed at constant speed.

    Returns the decision and the max position error of the fitted states.
    """
    path = path or solve_obstacle_path(instance.theta, instance.constants)
    if path.total_length <= 0:
        raise ParameterError("degenerate oracle path (start equals goal)")
    cfg = instance.config
    speed = SPEED_FRACTION * instance.constants["u_max"]
    t_f = path.total_length / speed
    knots = cfg.knots(t_f, path_knot_fractions(path, cfg.K))
    th = instance.theta
    x, u, _ = fit_velocity_integral(
        lambda t: speed * path.tangent(speed * t), th[0:2], th[2:4], cfg.K, cfg.N, knots
    )
    tt = np.linspace(0.0, t_f, 1000)
    err = float(np.max(np.abs(x(tt) - path.position(speed * tt))))
    return pb.DecisionVector(x, u, t_f), err


def oracle_decision(instance: pb.ProblemInstance) -> pb.DecisionVector:
    if instance.kind == pb.BRACHISTOCHRONE:
        return brachistochrone_decision(instance)[0]
    return obstacle_decision(instance)[0]


def analytic_cost(instance: pb.ProblemInstance) -> float:
    if instance.kind == pb.BRACHISTOCHRONE:
        return solve_brachistochrone(instance.theta, instance.constants["g"]).travel_time
    path = solve_obstacle_path(instance.theta, instance.constants)
    return path.total_length / (SPEED_FRACTION * instance.constants["u_max"])


# -- dataset ----------------------------------------------------------------


MIN_KNOT_GAP = 1e-3


def token_channels(kind: str, K: int = 3) -> list[str]:
    if kind == pb.BRACHISTOCHRONE:
        return ["y"]
    return ["x1", "x2", "u1", "u2", "t_K"] + [f"knot{k}" for k in range(1, K)]


def decision_to_tokens(z: pb.DecisionVector) -> NDArray[np.float64]:
    """``(M + 1, channels)`` target tokens.

    Obstacle tokens append ``t_K`` and the interior knot fractions as extra
    channels, repeated on every token; decoding reads them from the first.
    """
    Y = z.stacked()
    if z.controls is None:
        return Y
    extra = np.concatenate([[z.t_K], pb.knot_fractions(z)])
    return np.hstack([Y, np.tile(extra, (Y.shape[0], 1))])


def sanitize_fractions(f: ArrayLike) -> NDArray[np.float64]:
    """Force interior knot fractions into strictly increasing order inside (0, 1)."""
    f = np.sort(np.clip(np.asarray(f, dtype=np.float64), MIN_KNOT_GAP, 1.0 - MIN_KNOT_GAP))
    for i in range(1, f.size):
        f[i] = max(f[i], f[i - 1] + MIN_KNOT_GAP)
    return np.minimum(f, 1.0 - MIN_KNOT_GAP * (f.size - np.arange(f.size)))


def tokens_to_decision(instance: pb.ProblemInstance, tokens: ArrayLike) -> pb.DecisionVector:
    """Inverse of :func:`decision_to_tokens`; t_K and knots come from the first token."""
    T = np.asarray(tokens, dtype=np.float64)
    if instance.kind == pb.BRACHISTOCHRONE:
        return pb.make_decision(instance, T[:, :1])
    t_K = max(float(T[0, 4]), 1e-3)
    fractions = sanitize_fractions(T[0, 5:])
    return pb.make_decision(instance, T[:, 0:2], T[:, 2:4], t_K, fractions)


@dataclass
class Normalizer:
    """Per-channel min-max map onto [0, 1]."""

    lo: NDArray[np.float64]
    hi: NDArray[np.float64]

    @classmethod
    def fit(cls, data: NDArray[np.float64]) -> "Normalizer":
        data = data.reshape(-1, data.shape[-1])
        return cls(data.min(axis=0), data.max(axis=0))

    @property
    def span(self):
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    def normalize(self, v):
        return (np.asarray(v) - self.lo) / self.span

    def denormalize(self, v):
        return np.asarray(v) * self.span + self.lo

    def to_dict(self):
        return {"min": [float(v) for v in self.lo], "max": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.array(doc["min"], dtype=np.float64), np.array(doc["max"], dtype=np.float64))


@dataclass
class TrajectoryRecord:
    theta: NDArray[np.float64]
    target: NDArray[np.float64]  # normalized, (M + 1, channels)


@dataclass
class Dataset:
    kind: str
    config: pb.TranscriptionConfig
    constants: dict
    records: list
    target_norm: Normalizer
    theta_norm: Normalizer
    seed: int = 0
    ranges: dict = field(default_factory=dict)
    rejected: int = 0

    def __len__(self):
        return len(self.records)

    def instance(self, i: int) -> pb.ProblemInstance:
        return pb.ProblemInstance(self.kind, self.records[i].theta, self.config, self.constants)

    def decision(self, i: int) -> pb.DecisionVector:
        tokens = self.target_norm.denormalize(self.records[i].target)
        return tokens_to_decision(self.instance(i), tokens)

    def thetas(self) -> NDArray[np.float64]:
        return np.array([r.theta for r in self.records])

    def targets(self) -> NDArray[np.float64]:
        return np.array([r.target for r in self.records])

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.config.K,
            "N": self.config.N,
            "delta_P": self.config.delta_P,
            "constants": {k: float(v) for k, v in sorted(self.constants.items())},
            "seed": self.seed,
            "ranges": self.ranges,
            "channels": token_channels(self.kind, self.config.K),
            "target_norm": self.target_norm.to_dict(),
            "theta_norm": self.theta_norm.to_dict(),
            "count": len(self.records),
            "rejected": self.rejected,
            "oracle": {
                "clearance_margin": CLEARANCE_MARGIN,
                "speed_fraction": SPEED_FRACTION,
                "endpoint_buffer": ENDPOINT_BUFFER,
            },
        }

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        """First ``n_train`` records and the rest, sharing normalization."""
        kw = dict(
            kind=self.kind,
            config=self.config,
            constants=self.constants,
            target_norm=self.target_norm,
            theta_norm=self.theta_norm,
            seed=self.seed,
            ranges=self.ranges,
        )
        return Dataset(records=self.records[:n_train], **kw), Dataset(
            records=self.records[n_train:], **kw
        )

    def to_text(self) -> str:
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        lines = ["CBPDATA 1", json.dumps(self.metadata(), sort_keys=True)]
        for r in self.records:
            lines.append(
                " ".join(f(v) for v in r.theta) + " | " + " ".join(f(v) for v in r.target.ravel())
            )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Dataset":
        lines = text.splitlines()
        if not lines or lines[0].split()[0] != "CBPDATA":
            raise ConfigurationError("not a dataset file")
        meta = json.loads(lines[1])
        cfg = pb.TranscriptionConfig(meta["K"], meta["N"], meta["delta_P"])
        n_ch = len(meta["channels"])
        records = []
        for ln in lines[2:]:
            if not ln.strip():
                continue
            left, right = ln.split("|")
            theta = np.array([float(v) for v in left.split()])
            target = np.array([float(v) for v in right.split()]).reshape(-1, n_ch)
            records.append(TrajectoryRecord(theta, target))
        return cls(
            kind=meta["kind"],
            config=cfg,
            constants=meta["constants"],
            records=records,
            target_norm=Normalizer.from_dict(meta["target_norm"]),
            theta_norm=Normalizer.from_dict(meta["theta_norm"]),
            seed=meta["seed"],
            ranges=meta["ranges"],
            rejected=meta.get("rejected", 0),
        )

    @classmethod
    def read(cls, path) -> "Dataset":
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())


def _sample_obstacle_theta(rng: np.random.Generator, ranges: dict, radius: float):
    lo, hi = ranges["box"]
    S = rng.uniform(lo, hi, 2)
    G = rng.uniform(lo, hi, 2)
    d = G - S
    L = float(np.linalg.norm(d))
    if L < ranges["min_distance"]:
        return None
    perp = np.array([-d[1], d[0]]) / L
    C = S + rng.uniform(0.0, 1.0) * d + rng.uniform(-1.0, 1.0) * ranges["max_offset"] * perp
    if min(np.linalg.norm(S - C), np.linalg.norm(G - C)) < radius + ENDPOINT_BUFFER:
        return None
    return np.concatenate([S, G, C])


def sample_theta(kind: str, rng: np.random.Generator, ranges: dict, constants: dict):
    """One parameter draw, or ``None`` if it must be rejected."""
    if kind == pb.BRACHISTOCHRONE:
        a, b = ranges["theta1"]
        c, d = ranges["theta2"]
        return np.array([rng.uniform(a, b), rng.uniform(c, d)])
    return _sample_obstacle_theta(rng, ranges, oracle_radius(constants))


def solve_tokens(instance: pb.ProblemInstance) -> NDArray[np.float64]:
    return decision_to_tokens(oracle_decision(instance))


def build_dataset(
    kind: str,
    count: int,
    seed: int = 0,
    config: pb.TranscriptionConfig | None = None,
    ranges: dict | None = None,
    constants: dict | None = None,
    workers: int = 1,
) -> Dataset:
    """Sample ``count`` parameter vectors, solve them analytically and normalize.

    Draws come from one seeded generator in a fixed order, so the result
    depends only on the arguments (``workers`` only parallelizes solving).
    """
    if kind not in pb.KINDS:
        raise ArgumentError(f"unknown kind {kind!r}")
    if count < 1:
        raise ArgumentError("count must be >= 1")
    config = config or pb.TranscriptionConfig()
    rng_ranges = json.loads(json.dumps(ranges or DEFAULT_RANGES[kind]))
    consts = dict(pb.DEFAULT_CONSTANTS[kind])
    consts.update(constants or {})
    rng = np.random.default_rng(seed)

    thetas, rejected = [], 0
    while len(thetas) < count:
        th = sample_theta(kind, rng, rng_ranges, consts)
        if th is None:
            rejected += 1
            continue
        thetas.append(th)
    if rejected:
        log.info("rejected %d parameter draws", rejected)

    instances = [pb.ProblemInstance(kind, th, config, consts) for th in thetas]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            raw = list(ex.map(solve_tokens, instances, chunksize=64))  # map preserves order
    else:
        raw = [solve_tokens(inst) for inst in instances]

    stack = np.array(raw)
    tnorm = Normalizer.fit(stack)
    thnorm = Normalizer.fit(np.array(thetas))
    records = [TrajectoryRecord(th, tnorm.normalize(t)) for th, t in zip(thetas, raw)]
    return Dataset(kind, config, consts, records, tnorm, thnorm, seed, rng_ranges, rejected)

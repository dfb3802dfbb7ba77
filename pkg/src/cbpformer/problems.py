"""Parameterized problem instances and their collocation transcriptions.

Two problems are implemented:

* ``brachistochrone`` -- a calculus-of-variations problem in ``y(x)``; the
  horizontal coordinate ``x`` plays the role of time and the domain is the
  fixed interval ``[0, theta_1]``.
* ``obstacle`` -- minimum-time single-integrator motion from
  ``(theta_1, theta_2)`` to ``(theta_3, theta_4)`` around a disc of squared
  radius ``d`` centred at ``(theta_5, theta_6)``, with speed bounds.

A :class:`DecisionVector` holds state (and control) curves on knots spanning
``[0, t_K]``; the knots are uniform unless interior fractions are supplied.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from numpy.typing import ArrayLike, NDArray

from . import cbp_core as cbp
from .cbp_core import CompositeBernstein
from .errors import DomainError, NumericError, ParameterError, StructureError

log = logging.getLogger(__name__)

BRACHISTOCHRONE = "brachistochrone"
OBSTACLE = "obstacle"
KINDS = (BRACHISTOCHRONE, OBSTACLE)

GRAVITY = 9.81
Y_FLOOR = 1e-6

DEFAULT_CONSTANTS = {
    BRACHISTOCHRONE: {"g": GRAVITY},
    OBSTACLE: {"u_min": 0.2, "u_max": 1.0, "d": 1.0},
}
THETA_SIZE = {BRACHISTOCHRONE: 2, OBSTACLE: 6}


@dataclass(frozen=True)
class TranscriptionConfig:
    K: int = 3
    N: int = 10
    delta_P: float = 1e-2

    def __post_init__(self):
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if self.N < 1:
            raise ParameterError("N must be >= 1")
        if self.delta_P < 0:
            raise ParameterError("delta_P must be nonnegative")

    @property
    def M(self) -> int:
        return self.K * (self.N + 1) - 1

    def knots(self, t_final: float, fractions: ArrayLike | None = None) -> NDArray[np.float64]:
        """Knots on ``[0, t_final]``; uniform unless interior ``fractions`` are given."""
        if fractions is None:
            return cbp.uniform_knots(t_final, self.K)
        f = np.asarray(fractions, dtype=np.float64).reshape(-1)
        if f.size != self.K - 1:
            raise StructureError(f"need {self.K - 1} interior knot fractions, got {f.size}")
        return t_final * np.concatenate([[0.0], f, [1.0]])


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    kind: str
    theta: NDArray[np.float64]
    config: TranscriptionConfig = field(default_factory=TranscriptionConfig)
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown problem kind {self.kind!r}")
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != THETA_SIZE[self.kind]:
            raise ParameterError(
                f"{self.kind} needs {THETA_SIZE[self.kind]} parameters, got {theta.size}"
            )
        if not np.all(np.isfinite(theta)):
            raise ParameterError("theta must be finite")
        consts = dict(DEFAULT_CONSTANTS[self.kind])
        consts.update(self.constants)
        if self.kind == BRACHISTOCHRONE:
            if theta[0] <= 0 or theta[1] <= 0:
                raise ParameterError("brachistochrone needs theta_1 > 0 and theta_2 > 0")
        else:
            if self.config.N < 2:
                raise ParameterError("obstacle transcription needs N >= 2")
            if not 0 <= consts["u_min"] < consts["u_max"]:
                raise ParameterError("need 0 <= u_min < u_max")
            if consts["d"] <= 0:
                raise ParameterError("d must be positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "constants", consts)

    @property
    def n_x(self) -> int:
        return 1 if self.kind == BRACHISTOCHRONE else 2

    @property
    def n_u(self) -> int:
        return 0 if self.kind == BRACHISTOCHRONE else 2

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "theta": [float(v) for v in self.theta],
            "K": self.config.K,
            "N": self.config.N,
            "delta_P": self.config.delta_P,
            "constants": {k: float(v) for k, v in sorted(self.constants.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ProblemInstance":
        cfg = TranscriptionConfig(int(doc["K"]), int(doc["N"]), float(doc["delta_P"]))
        return cls(doc["kind"], doc["theta"], cfg, dict(doc.get("constants", {})))


@dataclass(frozen=True, eq=False)
class DecisionVector:
    states: CompositeBernstein
    controls: CompositeBernstein | None = None
    t_K: float = 1.0

    def __post_init__(self):
        if not self.t_K > 0:
            raise ParameterError("t_K must be positive")
        if self.controls is not None and not np.array_equal(
            self.states.knots, self.controls.knots
        ):
            raise StructureError("states and controls must share knots")

    def stacked(self) -> NDArray[np.float64]:
        """``(M + 1, n_x + n_u)`` array of state then control control points."""
        if self.controls is None:
            return self.states.flat.copy()
        return np.hstack([self.states.flat, self.controls.flat])


def knot_fractions(z: DecisionVector) -> NDArray[np.float64]:
    """Interior knots as fractions of the horizon."""
    k = z.states.knots
    return (k[1:-1] - k[0]) / (k[-1] - k[0])


def make_decision(
    instance: ProblemInstance,
    states: ArrayLike,
    controls: ArrayLike | None = None,
    t_K: float | None = None,
    fractions: ArrayLike | None = None,
) -> DecisionVector:
    """Wrap flat ``(M + 1, n)`` control-point arrays in curves on ``[0, t_K]``.

    Knots are uniform unless interior knot ``fractions`` are supplied.
    """
    cfg = instance.config
    if instance.kind == BRACHISTOCHRONE:
        t_K = float(instance.theta[0])
    elif t_K is None:
        raise StructureError("obstacle decisions need t_K")
    knots = cfg.knots(t_K, fractions)
    x = cbp.CompositeBernstein.from_flat(knots, states, cfg.N)
    u = None if controls is None else cbp.CompositeBernstein.from_flat(knots, controls, cfg.N)
    return DecisionVector(x, u, float(t_K))


# -- cost -------------------------------------------------------------------


@lru_cache(maxsize=32)
def _singular_rule(N: int, nodes: int):
    # Gauss-Legendre in tau with x = a + h tau^2; removes the 1/sqrt(x) endpoint singularity
    xg, wg = leggauss(nodes)
    tau = 0.5 * (xg + 1.0)
    s = tau**2
    weights = wg * tau  # 0.5 * wg * (2 tau)
    B = cbp.basis_matrix(N, s)
    dB = N * (cbp.basis_matrix(N - 1, s) @ (np.eye(N + 1)[1:] - np.eye(N + 1)[:-1]))
    for a in (s, weights, B, dB):
        a.setflags(write=False)
    return s, weights, B, dB


def _brachistochrone_terms(instance: ProblemInstance, y: NDArray[np.float64], nodes: int = 64):
    """Per-node integrand pieces: returns (F, dF/dy, dF/dy', B, dB, weights) on all segments."""
    cfg = instance.config
    g = instance.constants["g"]
    K, N = cfg.K, cfg.N
    h = instance.theta[0] / K
    _, wq, B, dB = _singular_rule(N, nodes)
    Y = y.reshape(K, N + 1)
    yv = Y @ B.T
    dyv = (Y @ dB.T) / h
    return yv, dyv, B, dB, wq * h, g


def brachistochrone_cost(
    instance: ProblemInstance,
    z: DecisionVector,
    quadrature: str = "gauss",
    floor: bool = False,
) -> float:
    """Travel time of the curve ``y(x)``.

    ``quadrature="gauss"`` integrates the polynomial's running cost with a
    singularity-removing substitution; ``"control_points"`` applies the
    Bernstein weights to the integrand evaluated at the control points.
    With ``floor`` every evaluated depth is clipped to ``Y_FLOOR`` instead of
    raising on nonpositive depths.
    """
    y = z.states.flat[:, 0]
    g = instance.constants["g"]
    if quadrature == "control_points":
        N = instance.config.N
        dy = cbp.elevate(cbp.derivative(z.states), N).flat[:, 0] if N > 1 else None
        if dy is None:
            dy = np.repeat(cbp.derivative(z.states).flat[:, 0], 2)
        yy = y.copy()
        yy[0] = max(yy[0], Y_FLOOR)
        if floor:
            yy = np.maximum(yy, Y_FLOOR)
        elif np.any(yy <= 0):
            raise DomainError("nonpositive depth at a control point")
        F = np.sqrt(1.0 + dy**2) / np.sqrt(2.0 * g * yy)
        w = z.states.widths / (N + 1)
        return float(np.sum(np.repeat(w, N + 1) * F))
    if quadrature != "gauss":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    yv, dyv, _, _, wq, g = _brachistochrone_terms(instance, y)
    if floor:
        yv = np.maximum(yv, Y_FLOOR)
    elif np.any(yv <= 0):
        raise DomainError("curve depth is nonpositive inside the domain")
    F = np.sqrt(1.0 + dyv**2) / np.sqrt(2.0 * g * yv)
    return float(np.sum(F * wq))


def cost(instance: ProblemInstance, z: DecisionVector, **kwargs) -> float:
    if instance.kind == BRACHISTOCHRONE:
        return brachistochrone_cost(instance, z, **kwargs)
    return float(z.t_K)


# -- constraints -----------------------------------------------------------


def dynamics_residual(instance: ProblemInstance, z: DecisionVector) -> NDArray[np.float64]:
    """Collocated dynamics defect, one row per control point (single integrator)."""
    if z.controls is None or instance.kind != OBSTACLE:
        raise StructureError("dynamics residual needs an obstacle instance with controls")
    D = cbp.differentiation_matrix(instance.config.N, z.states.knots)
    return D.T @ z.states.flat - z.controls.flat


def equality_residual(instance: ProblemInstance, z: DecisionVector) -> NDArray[np.float64]:
    """Boundary residual, read off the first and last control points only."""
    first, last = z.states.flat[0], z.states.flat[-1]
    th = instance.theta
    if instance.kind == BRACHISTOCHRONE:
        return np.array([first[0] - 0.0, last[0] - th[1]])
    return np.concatenate([first - th[0:2], last - th[2:4]])


def snap_boundary(instance: ProblemInstance, z: DecisionVector) -> DecisionVector:
    """Copy of ``z`` whose first and last state control points equal the boundary values.

    By the endpoint property these two points are the curve's endpoints, so
    this zeroes the equality residual and leaves every other point alone.
    """
    X = z.states.flat.copy()
    th = instance.theta
    if instance.kind == BRACHISTOCHRONE:
        X[0, 0], X[-1, 0] = 0.0, th[1]
    else:
        X[0], X[-1] = th[0:2], th[2:4]
    states = cbp.CompositeBernstein.from_flat(z.states.knots, X, z.states.degree)
    return DecisionVector(states, z.controls, z.t_K)


def inequality_residual(instance: ProblemInstance, z: DecisionVector) -> NDArray[np.float64]:
    """Per control point ``[u_min^2 - |u|^2, |u|^2 - u_max^2, d - |x - c|^2]``; <= 0 is satisfied."""
    if instance.kind == BRACHISTOCHRONE:
        return np.zeros((z.states.M + 1, 0))
    c = instance.constants
    u2 = np.sum(z.controls.flat**2, axis=1)
    r2 = np.sum((z.states.flat - instance.theta[4:6]) ** 2, axis=1)
    return np.column_stack([c["u_min"] ** 2 - u2, u2 - c["u_max"] ** 2, c["d"] - r2])


def knot_residual(z: DecisionVector) -> NDArray[np.float64]:
    res = cbp.knot_continuity_residual(z.states)
    if z.controls is not None:
        res += cbp.knot_continuity_residual(z.controls)
    return np.concatenate(res) if res else np.zeros(0)


def violation(instance: ProblemInstance, z: DecisionVector) -> float:
    """Squared constraint violation used by the penalty merit."""
    total = float(np.sum(equality_residual(instance, z) ** 2))
    total += float(np.sum(knot_residual(z) ** 2))
    total += float(np.sum(np.maximum(inequality_residual(instance, z), 0.0) ** 2))
    if instance.kind == OBSTACLE:
        r = np.linalg.norm(dynamics_residual(instance, z), axis=1)
        total += float(np.sum(np.maximum(r - instance.config.delta_P, 0.0) ** 2))
    return total


def is_feasible(instance: ProblemInstance, z: DecisionVector, tol: float = 1e-6) -> bool:
    """Collocation-level feasibility (control points only, not certified)."""
    if np.max(np.abs(equality_residual(instance, z)), initial=0.0) > tol:
        return False
    if np.max(np.abs(knot_residual(z)), initial=0.0) > tol:
        return False
    if np.max(inequality_residual(instance, z), initial=-np.inf) > tol:
        return False
    if instance.kind == OBSTACLE:
        r = np.linalg.norm(dynamics_residual(instance, z), axis=1)
        if r.max() > instance.config.delta_P:
            return False
    return True


# -- penalty merit and refiner ---------------------------------------------


class Merit:
    """Penalty merit over a flat parameter vector, with its exact gradient.

    The parameter vector is ``[states.flat, controls.flat, t_K]`` for the
    obstacle problem and ``states.flat`` for the brachistochrone.
    """

    def __init__(self, instance: ProblemInstance, penalty: float, fractions=None):
        self.instance = instance
        self.fractions = None if fractions is None else np.array(fractions, dtype=np.float64)
        self.penalty = penalty
        cfg = instance.config
        self.n = cfg.M + 1
        self._knot_last = np.array([k * (cfg.N + 1) + cfg.N for k in range(cfg.K - 1)], dtype=int)
        if instance.kind == OBSTACLE:
            # differentiation matrix for unit horizon; scales as 1 / t_K
            self._D1 = cbp.differentiation_matrix(cfg.N, cfg.knots(1.0, self.fractions))

    def pack(self, z: DecisionVector) -> NDArray[np.float64]:
        if self.instance.kind == BRACHISTOCHRONE:
            return z.states.flat[:, 0].copy()
        return np.concatenate([z.states.flat.ravel(), z.controls.flat.ravel(), [z.t_K]])

    def unpack(self, p: NDArray[np.float64]) -> DecisionVector:
        if self.instance.kind == BRACHISTOCHRONE:
            return make_decision(self.instance, p.reshape(-1, 1))
        n = self.n
        return make_decision(
            self.instance,
            p[: 2 * n].reshape(n, 2),
            p[2 * n : 4 * n].reshape(n, 2),
            p[-1],
            self.fractions,
        )

    def _knot_terms(self, X, grad):
        i = self._knot_last
        r = X[i] - X[i + 1]
        grad[i] += 2.0 * r
        grad[i + 1] -= 2.0 * r
        return float(np.sum(r**2))

    def value_and_grad(self, p: NDArray[np.float64]) -> tuple[float, float, NDArray[np.float64]]:
        """Return ``(merit, violation, gradient)``; merit is ``inf`` outside the domain."""
        if self.instance.kind == BRACHISTOCHRONE:
            return self._brachistochrone(p)
        return self._obstacle(p)

    def _brachistochrone(self, p):
        inst = self.instance
        th = inst.theta
        grad = np.zeros_like(p)
        yv, dyv, B, dB, wq, g = _brachistochrone_terms(inst, p)
        if np.any(yv <= 0):
            return np.inf, np.inf, grad
        K, N = inst.config.K, inst.config.N
        h = th[0] / K
        root = np.sqrt(1.0 + dyv**2)
        sq = np.sqrt(2.0 * g * yv)
        J = float(np.sum(wq * root / sq))
        dF_dy = -0.5 * root / sq / yv
        dF_ddy = dyv / root / sq
        gJ = (wq * dF_dy) @ B + (wq * dF_ddy) @ dB / h
        grad += gJ.reshape(-1)

        X = p.reshape(-1, 1)
        gv = np.zeros_like(X)
        e = np.array([X[0, 0], X[-1, 0] - th[1]])
        v = float(np.sum(e**2))
        gv[0, 0] += 2 * e[0]
        gv[-1, 0] += 2 * e[1]
        v += self._knot_terms(X, gv)
        grad += self.penalty * gv.reshape(-1)
        return J + self.penalty * v, v, grad

    def _obstacle(self, p):
        inst = self.instance
        th, c = inst.theta, inst.constants
        n = self.n
        X = p[: 2 * n].reshape(n, 2)
        U = p[2 * n : 4 * n].reshape(n, 2)
        tK = p[-1]
        grad = np.zeros_like(p)
        if not tK > 0:
            return np.inf, np.inf, grad
        gX = np.zeros_like(X)
        gU = np.zeros_like(U)
        gT = 0.0

        e0 = X[0] - th[0:2]
        e1 = X[-1] - th[2:4]
        v = float(e0 @ e0 + e1 @ e1)
        gX[0] += 2 * e0
        gX[-1] += 2 * e1
        v += self._knot_terms(X, gX)
        v += self._knot_terms(U, gU)

        u2 = np.sum(U**2, axis=1)
        lo = np.maximum(c["u_min"] ** 2 - u2, 0.0)
        hi = np.maximum(u2 - c["u_max"] ** 2, 0.0)
        rel = X - th[4:6]
        ob = np.maximum(c["d"] - np.sum(rel**2, axis=1), 0.0)
        v += float(np.sum(lo**2 + hi**2 + ob**2))
        gU += (-4.0 * lo + 4.0 * hi)[:, None] * U
        gX += (-4.0 * ob)[:, None] * rel

        P = self._D1.T @ X / tK
        R = P - U
        rn = np.linalg.norm(R, axis=1)
        ex = np.maximum(rn - inst.config.delta_P, 0.0)
        v += float(np.sum(ex**2))
        G = np.zeros_like(R)
        act = ex > 0
        G[act] = (2.0 * ex[act] / rn[act])[:, None] * R[act]
        gX += self._D1 @ G / tK
        gU -= G
        gT += float(np.sum(G * (-P / tK)))

        grad[: 2 * n] = self.penalty * gX.ravel()
        grad[2 * n : 4 * n] = self.penalty * gU.ravel()
        grad[-1] = 1.0 + self.penalty * gT
        return tK + self.penalty * v, v, grad


def warm_start_refine(
    instance: ProblemInstance,
    z0: DecisionVector,
    iters: int = 500,
    penalty: float = 100.0,
    c1: float = 1e-4,
    shrink: float = 0.5,
    max_backtracks: int = 60,
) -> DecisionVector:
    """Gradient descent with Armijo backtracking on the penalty merit.

    Knot positions stay at the fractions of ``z0``'s horizon; ``t_K`` is free
    for the obstacle problem.  Only decreasing steps are accepted.  The returned iterate is the last
    accepted one if its violation does not exceed that of ``z0``; otherwise
    the accepted iterate of least violation.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    fractions = knot_fractions(z0) if instance.kind == OBSTACLE else None
    merit = Merit(instance, penalty, fractions)
    p = merit.pack(z0)
    f, v, g = merit.value_and_grad(p)
    if not np.isfinite(f):
        raise NumericError("initial merit is not finite", best=z0)
    v0 = v
    best_p, best_v = p.copy(), v
    step = 1.0
    for _ in range(iters):
        gg = float(g @ g)
        if gg == 0.0 or not np.isfinite(gg):
            if not np.isfinite(gg):
                raise NumericError("non-finite merit gradient", best=merit.unpack(best_p))
            break
        t = step
        for _ in range(max_backtracks):
            q = p - t * g
            fq, vq, gq = merit.value_and_grad(q)
            if np.isfinite(fq) and fq <= f - c1 * t * gg:
                break
            t *= shrink
        else:
            break  # no descent step found; stationary to working precision
        p, f, v, g = q, fq, vq, gq
        if v < best_v:
            best_p, best_v = p.copy(), v
        step = t * 2.0
    if v <= v0:
        return merit.unpack(p)
    return merit.unpack(best_p)


def export_warm_start(instance: ProblemInstance, z: DecisionVector) -> str:
    """Instance document, ``---``, then the state (and control) curve records."""
    parts = [instance.to_json(), "---", cbp.to_text(z.states).rstrip("\n")]
    if z.controls is not None:
        parts += ["---", cbp.to_text(z.controls).rstrip("\n")]
    return "\n".join(parts) + "\n"


def import_warm_start(text: str) -> tuple[ProblemInstance, DecisionVector]:
    blocks = [b.strip() for b in text.split("\n---\n")]
    instance = ProblemInstance.from_dict(json.loads(blocks[0]))
    states = cbp.from_text(blocks[1])
    controls = cbp.from_text(blocks[2]) if len(blocks) > 2 else None
    return instance, DecisionVector(states, controls, float(states.knots[-1]))

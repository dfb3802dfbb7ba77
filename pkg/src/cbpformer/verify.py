"""Solver-free feasibility certificates for Bernstein trajectories.

Boundary conditions are decided exactly from the first and last control
points.  Polynomial inequality constraints are rewritten as scalar composite
Bernstein polynomials whose coefficients bound the constraint over the whole
horizon; degree elevation tightens those bounds when the first test fails.
The test is sufficient only, so failure yields ``Inconclusive`` rather than
a verdict of infeasibility.  :func:`counterexample_scan` provides the
opposite, sampling-based direction.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cbp_core as cbp
from . import problems as pb

CERTIFIED = "Certified"
INCONCLUSIVE = "Inconclusive"
VIOLATED_AT_ENDPOINT = "ViolatedAtEndpoint"

DEFAULT_TOL = 1e-6


@dataclass
class ConstraintEntry:
    name: str
    min_coefficient: float
    elevation_used: int
    satisfied: bool
    max_coefficient: float | None = None


@dataclass
class Certificate:
    status: str
    entries: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def entry(self, name: str) -> ConstraintEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "constraints": [asdict(e) for e in self.entries],
            "elapsed": self.elapsed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def obstacle_polynomial(instance: pb.ProblemInstance, states: cbp.CompositeBernstein):
    """``(x_1 - c_1)^2 + (x_2 - c_2)^2 - d`` as a degree-2N scalar curve."""
    th = instance.theta
    rel = states.coeffs - th[4:6]
    a = states.with_coeffs(rel[:, :, 0])
    b = states.with_coeffs(rel[:, :, 1])
    sq = cbp.product(a, a).coeffs + cbp.product(b, b).coeffs
    return a.with_coeffs(sq - instance.constants["d"])


def speed_polynomial(controls: cbp.CompositeBernstein):
    """``|u|^2`` as a scalar curve of twice the degree."""
    a = controls.with_coeffs(controls.coeffs[:, :, 0])
    b = controls.with_coeffs(controls.coeffs[:, :, 1])
    return a.with_coeffs(cbp.product(a, a).coeffs + cbp.product(b, b).coeffs)


def _refine(poly: cbp.CompositeBernstein, step: int, max_elevation: int, test):
    """Elevate by ``step`` until ``test(lo, hi)`` passes or the budget is spent."""
    extra = 0
    while True:
        cur = poly if extra == 0 else cbp.elevate(poly, poly.degree + extra)
        lo, hi = cbp.coeff_bounds(cur)
        if test(lo[0], hi[0]) or extra + step > max_elevation:
            return float(lo[0]), float(hi[0]), extra, bool(test(lo[0], hi[0]))
        extra += step


def certify(
    instance: pb.ProblemInstance,
    z: pb.DecisionVector,
    max_elevation: int | None = None,
    tol: float = DEFAULT_TOL,
) -> Certificate:
    """Certify ``z`` against every constraint of ``instance``.

    ``max_elevation`` is the largest number of degrees added to a constraint
    polynomial (default ``6 N``); elevation proceeds in steps of ``N``.
    """
    t0 = time.perf_counter()
    N = instance.config.N
    if max_elevation is None:
        max_elevation = 6 * N
    entries = []

    eq = pb.equality_residual(instance, z)
    eq_max = float(np.max(np.abs(eq)))
    entries.append(ConstraintEntry("boundary", -eq_max, 0, eq_max <= tol))
    kr = pb.knot_residual(z)
    k_max = float(np.max(np.abs(kr), initial=0.0))
    entries.append(ConstraintEntry("knot_continuity", -k_max, 0, k_max <= tol))
    if not all(e.satisfied for e in entries):
        return Certificate(VIOLATED_AT_ENDPOINT, entries, time.perf_counter() - t0)

    if instance.kind == pb.OBSTACLE:
        c = instance.constants
        r = np.linalg.norm(pb.dynamics_residual(instance, z), axis=1)
        entries.append(
            ConstraintEntry("dynamics", -float(r.max()), 0, bool(r.max() <= instance.config.delta_P))
        )
        lo, hi, used, ok = _refine(
            obstacle_polynomial(instance, z.states), N, max_elevation, lambda lo, hi: lo >= 0.0
        )
        entries.append(ConstraintEntry("obstacle", lo, used, ok, hi))
        umin2, umax2 = c["u_min"] ** 2, c["u_max"] ** 2
        lo, hi, used, ok = _refine(
            speed_polynomial(z.controls),
            N,
            max_elevation,
            lambda lo, hi: lo >= umin2 and hi <= umax2,
        )
        entries.append(ConstraintEntry("speed", lo, used, ok, hi))

    status = CERTIFIED if all(e.satisfied for e in entries) else INCONCLUSIVE
    return Certificate(status, entries, time.perf_counter() - t0)


def counterexample_scan(instance: pb.ProblemInstance, z: pb.DecisionVector, samples: int = 1000):
    """Worst sampled violation as ``{"t", "constraint", "value"}``, or ``None``.

    ``value`` is the constraint slack at ``t`` (negative means violated).
    A returned counterexample proves infeasibility; ``None`` proves nothing.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if instance.kind != pb.OBSTACLE:
        return None
    c = instance.constants
    t = np.linspace(z.states.knots[0], z.states.knots[-1], samples)
    x = cbp.evaluate(z.states, t)
    u2 = np.sum(cbp.evaluate(z.controls, t) ** 2, axis=1)
    slacks = {
        "obstacle": np.sum((x - instance.theta[4:6]) ** 2, axis=1) - c["d"],
        "speed_min": u2 - c["u_min"] ** 2,
        "speed_max": c["u_max"] ** 2 - u2,
    }
    worst = None
    for name, s in slacks.items():
        i = int(np.argmin(s))
        if s[i] < 0 and (worst is None or s[i] < worst["value"]):
            worst = {"t": float(t[i]), "constraint": name, "value": float(s[i])}
    return worst

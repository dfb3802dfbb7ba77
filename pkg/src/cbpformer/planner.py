"""Receding-horizon obstacle avoidance with certified trajectory segments.

Each iteration encodes the vehicle position, a short-range target toward the
destination and the nearest sensed obstacle as an obstacle-problem parameter
vector, asks the sequence model for a trajectory, and certifies it.  A
trajectory that fails certification is refined by the penalty solver and, if
it still fails, replaced by the analytic oracle.  The vehicle then follows
the certified trajectory to its endpoint and the loop repeats.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import cbp_core as cbp
from . import oracles as orc
from . import problems as pb
from . import verify as vf
from .errors import NonConvergenceError, NumericError, ScenarioError

log = logging.getLogger(__name__)

SENTINEL_DISTANCE = 1e3
NONE, REFINED, ORACLE = "none", "refined", "oracle"
REFINE_ITERS = 500
SEGMENT_SAMPLES = 200


@dataclass(frozen=True)
class Obstacle:
    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 2 or not all(map(math.isfinite, c)):
            raise ScenarioError("obstacle center must be two finite numbers")
        if not self.radius > 0:
            raise ScenarioError("obstacle radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class Scenario:
    """A planning problem: start, destination and a list of disc obstacles.

    ``constants`` supplies the speed bounds.  Each obstacle's squared radius
    plays the role of ``d`` when that obstacle is encoded in a parameter
    vector.
    """

    start: tuple
    destination: tuple
    obstacles: tuple = ()
    sensing_radius: float = 4.0
    horizon_distance: float = 3.0
    goal_tolerance: float = 0.3
    constants: dict = field(default_factory=dict)
    config: pb.TranscriptionConfig = field(default_factory=pb.TranscriptionConfig)
    max_iterations: int = 100

    def __post_init__(self):
        obs = tuple(o if isinstance(o, Obstacle) else Obstacle(**o) for o in self.obstacles)
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "destination", tuple(float(v) for v in self.destination))
        consts = dict(pb.DEFAULT_CONSTANTS[pb.OBSTACLE])
        consts.update(self.constants)
        object.__setattr__(self, "constants", consts)
        if self.horizon_distance <= 0 or self.goal_tolerance <= 0 or self.sensing_radius < 0:
            raise ScenarioError("horizon_distance and goal_tolerance must be positive")
        if self.max_iterations < 0:
            raise ScenarioError("max_iterations must be nonnegative")
        dest = np.array(self.destination)
        start = np.array(self.start)
        for i, o in enumerate(obs):
            if np.linalg.norm(dest - o.center) <= o.radius:
                raise ScenarioError(f"destination lies inside obstacle {i}")
            if np.linalg.norm(start - o.center) < self.oracle_radius(o):
                raise ScenarioError(f"start lies inside the inflated disc of obstacle {i}")

    def oracle_radius(self, obstacle: Obstacle) -> float:
        return obstacle.radius + orc.CLEARANCE_MARGIN

    def constants_for(self, obstacle: Obstacle | None) -> dict:
        c = dict(self.constants)
        if obstacle is not None:
            c["d"] = obstacle.radius**2
        return c

    def to_dict(self) -> dict:
        return {
            "start": list(self.start),
            "destination": list(self.destination),
            "obstacles": [{"center": list(o.center), "radius": o.radius} for o in self.obstacles],
            "sensing_radius": self.sensing_radius,
            "horizon_distance": self.horizon_distance,
            "goal_tolerance": self.goal_tolerance,
            "constants": {k: float(v) for k, v in sorted(self.constants.items())},
            "K": self.config.K,
            "N": self.config.N,
            "delta_P": self.config.delta_P,
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        doc = dict(doc)
        cfg = pb.TranscriptionConfig(
            int(doc.pop("K", 3)), int(doc.pop("N", 10)), float(doc.pop("delta_P", 1e-2))
        )
        obstacles = tuple(Obstacle(tuple(o["center"]), o["radius"]) for o in doc.pop("obstacles", []))
        return cls(obstacles=obstacles, config=cfg, **doc)


def corridor_scenario(**overrides) -> Scenario:
    """Three unit-radius obstacles staggered along a 10 m corridor."""
    doc = {
        "start": (0.0, 5.0),
        "destination": (10.0, 5.0),
        "obstacles": (
            Obstacle((2.0, 5.3), 1.0),
            Obstacle((5.0, 4.6), 1.0),
            Obstacle((8.0, 5.3), 1.0),
        ),
    }
    doc.update(overrides)
    return Scenario(**doc)


# -- parameter construction -------------------------------------------------


def _blocks(scenario: Scenario, o: Obstacle, p, target) -> bool:
    return not orc._segment_clears(p, target, np.asarray(o.center), scenario.oracle_radius(o))


def nearest_obstacle(scenario: Scenario, pos: ArrayLike, target: ArrayLike | None = None) -> int | None:
    """Index of the obstacle to encode for a vehicle at ``pos``.

    Candidates are obstacles whose center is within sensing range.  When a
    ``target`` is given, candidates whose inflated disc blocks the straight
    segment toward it take precedence.  Within a group the nearest center
    wins and ties go to the lower index.
    """
    p = np.asarray(pos, dtype=np.float64)
    best, best_key = None, None
    for i, o in enumerate(scenario.obstacles):
        dist = float(np.linalg.norm(p - o.center))
        if dist > scenario.sensing_radius:
            continue
        blocked = target is not None and _blocks(scenario, o, p, np.asarray(target))
        key = (not blocked, dist)
        if best_key is None or key < best_key:  # strict: ties keep lower index
            best, best_key = i, key
    return best


def _push_out(scenario: Scenario, target: NDArray[np.float64]) -> NDArray[np.float64]:
    """Move a horizon target radially out of every buffered obstacle disc."""
    p = target.copy()
    for _ in range(10):
        moved = False
        for o in scenario.obstacles:
            need = scenario.oracle_radius(o) + orc.ENDPOINT_BUFFER
            v = p - o.center
            dist = float(np.linalg.norm(v))
            if dist < need:
                v = v / dist if dist > 0 else np.array([0.0, 1.0])
                p = np.asarray(o.center) + need * v
                moved = True
        if not moved:
            break
    return p


def horizon_target(scenario: Scenario, pos: ArrayLike) -> NDArray[np.float64]:
    p = np.asarray(pos, dtype=np.float64)
    dest = np.asarray(scenario.destination)
    gap = dest - p
    dist = float(np.linalg.norm(gap))
    if dist <= scenario.horizon_distance:
        target = dest.copy()
    else:
        target = p + scenario.horizon_distance * gap / dist
    return _push_out(scenario, target)


def build_theta(scenario: Scenario, vehicle_pos: ArrayLike) -> NDArray[np.float64]:
    """Six-component parameter vector for the current horizon.

    With no obstacle in sensing range, a sentinel center is placed far away
    along the left-hand perpendicular of the heading toward the destination.
    """
    p = np.asarray(vehicle_pos, dtype=np.float64)
    for i, o in enumerate(scenario.obstacles):
        if np.linalg.norm(p - o.center) < o.radius:
            raise ScenarioError(f"vehicle at {p.tolist()} is inside obstacle {i}")
    target = horizon_target(scenario, p)
    idx = nearest_obstacle(scenario, p, target)
    if idx is not None:
        center = np.asarray(scenario.obstacles[idx].center)
    else:
        heading = np.asarray(scenario.destination) - p
        n = float(np.linalg.norm(heading))
        heading = heading / n if n > 0 else np.array([1.0, 0.0])
        center = p + SENTINEL_DISTANCE * np.array([-heading[1], heading[0]])
    return np.concatenate([p, target, center])


# -- one planning step ------------------------------------------------------


def project_structure(instance: pb.ProblemInstance, z: pb.DecisionVector) -> pb.DecisionVector:
    """Make a predicted decision satisfy every equality of the transcription.

    The predicted controls, with duplicated knot points merged, are refitted
    as a degree ``N - 1`` velocity whose integral joins the two boundary
    points; the states are that integral.  Boundary conditions, continuity
    and the collocated dynamics then hold exactly and only the inequalities
    are left to certify.
    """
    cfg = instance.config
    U = z.controls.coeffs.copy()
    for k in range(U.shape[0] - 1):
        U[k, -1] = U[k + 1, 0] = 0.5 * (U[k, -1] + U[k + 1, 0])
    velocity = z.controls.with_coeffs(U)
    x, u, _ = orc.fit_velocity_integral(
        velocity, instance.theta[0:2], instance.theta[2:4], cfg.K, cfg.N, z.states.knots
    )
    return pb.DecisionVector(x, u, z.t_K)


def _secondary_entries(scenario, instance, z, skip, N) -> list:
    """Clearance checks against the other sensed obstacles."""
    p = instance.theta[0:2]
    out = []
    for i, o in enumerate(scenario.obstacles):
        if i == skip or np.linalg.norm(p - o.center) > scenario.sensing_radius:
            continue
        other = pb.ProblemInstance(
            pb.OBSTACLE,
            np.concatenate([instance.theta[0:4], o.center]),
            instance.config,
            scenario.constants_for(o),
        )
        lo, hi, used, ok = vf._refine(
            vf.obstacle_polynomial(other, z.states), N, 6 * N, lambda lo, hi: lo >= 0.0
        )
        out.append(vf.ConstraintEntry(f"obstacle[{i}]", lo, used, ok, hi))
    return out


def certify_step(scenario, instance, z, skip) -> vf.Certificate:
    t0 = time.perf_counter()
    cert = vf.certify(instance, z)
    if cert.status == vf.VIOLATED_AT_ENDPOINT:
        return cert
    entries = cert.entries + _secondary_entries(scenario, instance, z, skip, instance.config.N)
    status = vf.CERTIFIED if all(e.satisfied for e in entries) else vf.INCONCLUSIVE
    return vf.Certificate(status, entries, cert.elapsed + time.perf_counter() - t0)


@dataclass
class StepResult:
    theta: NDArray[np.float64]
    predicted: pb.DecisionVector | None
    decision: pb.DecisionVector
    certificate: vf.Certificate
    fallback_used: str


def plan_step(scenario: Scenario, model, vehicle_pos: ArrayLike) -> StepResult:
    """Infer, certify, and walk the fallback ladder until a certified trajectory exists.

    ``model`` may be ``None``, in which case the oracle is used directly.
    """
    theta = build_theta(scenario, vehicle_pos)
    idx = nearest_obstacle(scenario, theta[0:2], theta[2:4])
    consts = scenario.constants_for(scenario.obstacles[idx] if idx is not None else None)
    instance = pb.ProblemInstance(pb.OBSTACLE, theta, scenario.config, consts)
    cfg = scenario.config

    predicted = None
    if model is not None:
        from .seq2seq import predict_tokens

        tokens = predict_tokens(model, theta, kind=pb.OBSTACLE, K=cfg.K, N=cfg.N)
        predicted = project_structure(instance, orc.tokens_to_decision(instance, tokens))
        cert = certify_step(scenario, instance, predicted, idx)
        if cert.certified:
            return StepResult(theta, predicted, predicted, cert, NONE)
        try:
            refined = pb.warm_start_refine(instance, predicted, iters=REFINE_ITERS)
        except NumericError as err:
            refined = err.best
        if refined is not None:
            refined = project_structure(instance, refined)
            cert = certify_step(scenario, instance, refined, idx)
            if cert.certified:
                return StepResult(theta, predicted, refined, cert, REFINED)

    z, _ = orc.obstacle_decision(instance)
    cert = certify_step(scenario, instance, z, idx)
    if not cert.certified:
        raise ScenarioError(
            f"oracle trajectory from {theta[0:2].tolist()} could not be certified ({cert.status})"
        )
    return StepResult(theta, predicted, z, cert, ORACLE)


# -- the loop ---------------------------------------------------------------


def sample_segment(z: pb.DecisionVector, samples: int = SEGMENT_SAMPLES) -> NDArray[np.float64]:
    """``(samples, 4)`` rows of ``t, x, y, speed`` along a trajectory."""
    t = np.linspace(0.0, z.t_K, samples)
    x = cbp.evaluate(z.states, t)
    u = cbp.evaluate(z.controls, t)
    return np.column_stack([t, x, np.linalg.norm(u, axis=1)])


@dataclass
class PlanIteration:
    theta: NDArray[np.float64]
    predicted: pb.DecisionVector | None
    executed: pb.DecisionVector
    certificate: vf.Certificate
    fallback_used: str

    def to_dict(self) -> dict:
        cert = self.certificate.to_dict()
        cert.pop("elapsed")  # wall time; kept out so logs are reproducible
        return {
            "theta": [float(v) for v in self.theta],
            "certificate": cert,
            "fallback_used": self.fallback_used,
            "t_K": float(self.executed.t_K),
            "predicted": None if self.predicted is None else pb.export_warm_start(
                _instance_of(self), self.predicted
            ),
            "executed": cbp.to_text(self.executed.states) + cbp.to_text(self.executed.controls),
        }


def _instance_of(it: PlanIteration) -> pb.ProblemInstance:
    z = it.executed
    cfg = pb.TranscriptionConfig(z.states.K, z.states.degree)
    return pb.ProblemInstance(pb.OBSTACLE, it.theta, cfg)


@dataclass
class PlanLog:
    scenario: Scenario
    iterations: list = field(default_factory=list)
    reached_goal: bool = False
    total_time: float = 0.0

    def final_position(self) -> NDArray[np.float64]:
        if not self.iterations:
            return np.array(self.scenario.start)
        return self.iterations[-1].executed.states.flat[-1].copy()

    def fallback_counts(self) -> dict:
        counts = {NONE: 0, REFINED: 0, ORACLE: 0}
        for it in self.iterations:
            counts[it.fallback_used] += 1
        return counts

    def executed_path(self, samples: int = SEGMENT_SAMPLES) -> NDArray[np.float64]:
        """Concatenated ``t, x, y, speed`` rows with a running clock."""
        rows, offset = [], 0.0
        for it in self.iterations:
            seg = sample_segment(it.executed, samples)
            seg[:, 0] += offset
            rows.append(seg if not rows else seg[1:])
            offset += it.executed.t_K
        if not rows:
            return np.array([[0.0, *self.scenario.start, 0.0]])
        return np.vstack(rows)

    def min_clearance(self, samples: int = 10_000) -> float:
        """Least ``|x - c|^2 - r^2`` over all obstacles along the executed path."""
        if not self.iterations or not self.scenario.obstacles:
            return math.inf
        per = max(2, samples // len(self.iterations))
        pts = self.executed_path(per)[:, 1:3]
        worst = math.inf
        for o in self.scenario.obstacles:
            worst = min(worst, float(np.min(np.sum((pts - o.center) ** 2, axis=1)) - o.radius**2))
        return worst

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "reached_goal": self.reached_goal,
            "iterations": [it.to_dict() for it in self.iterations],
            "final_position": [float(v) for v in self.final_position()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def path_csv(self) -> str:
        return _csv(self.executed_path())

    def iteration_csv(self, i: int) -> str:
        return _csv(sample_segment(self.iterations[i].executed))

    def write(self, prefix: str) -> list:
        """Write ``<prefix>.json``, ``<prefix>_path.csv`` and one CSV per iteration."""
        written = []
        docs = [(f"{prefix}.json", self.to_json() + "\n"), (f"{prefix}_path.csv", self.path_csv())]
        docs += [(f"{prefix}_iter{i:03d}.csv", self.iteration_csv(i)) for i in range(len(self.iterations))]
        for path, text in docs:
            with open(path, "w", encoding="ascii", newline="") as fh:
                fh.write(text)
            written.append(path)
        return written


def _csv(rows: NDArray[np.float64]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "x", "y", "speed"])
    for r in rows:
        w.writerow([format(float(v), ".17g") for v in r])
    return out.getvalue()


def run(scenario: Scenario, model=None) -> PlanLog:
    """Plan and execute horizons until the destination is reached.

    Raises :class:`NonConvergenceError` carrying the partial log when the
    iteration cap is hit first.
    """
    t0 = time.perf_counter()
    planlog = PlanLog(scenario)
    pos = np.array(scenario.start)
    dest = np.array(scenario.destination)
    for _ in range(scenario.max_iterations + 1):
        if np.linalg.norm(pos - dest) <= scenario.goal_tolerance:
            planlog.reached_goal = True
            break
        if len(planlog.iterations) == scenario.max_iterations:
            break
        step = plan_step(scenario, model, pos)
        planlog.iterations.append(
            PlanIteration(step.theta, step.predicted, step.decision, step.certificate, step.fallback_used)
        )
        pos = step.decision.states.flat[-1].copy()
        log.info("iteration %d: %s, now at %s", len(planlog.iterations), step.fallback_used, pos)
    planlog.total_time = time.perf_counter() - t0
    if not planlog.reached_goal:
        raise NonConvergenceError(
            f"goal not reached after {len(planlog.iterations)} iterations", result=planlog
        )
    return planlog

"""Composite Bernstein trajectories, analytic data oracles, a numpy sequence
model that predicts control points, solver-free certification and a
receding-horizon planner."""

__version__ = "0.1.0"

"""Single-degree-of-freedom plant with an optional cubic (Duffing) spring.

    m x'' + c x' + k x + k3 x^3 = u - m xg''

Control force and ground acceleration are held constant over each RK4 step.
The acceleration handed back to callers is the relative acceleration x''.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

DIVERGENCE_LIMIT = 1e6


class PlantDivergence(ArithmeticError):
    def __init__(self, step: int | None, state):
        self.step = step
        self.state = state
        super().__init__(f"plant diverged at step {step}: state={state}")


@dataclass(frozen=True)
class PlantParams:
    m: float
    c: float
    k: float
    k3: float = 0.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be > 0")
        if not self.k3 >= 0:
            raise ValueError("cubic stiffness must be >= 0")


# the "randomly assumed" design model and the true plant it is applied to
ASSUMED_PLANT = PlantParams(m=1.6, c=-0.5, k=181.0, k3=0.0)
TRUE_PLANT = PlantParams(m=1.0, c=0.4, k=100.0, k3=1.0)


class PlantState(NamedTuple):
    x: float = 0.0
    v: float = 0.0


def acceleration(s: PlantState, u: float, xg_ddot: float, p: PlantParams) -> float:
    x, v = s
    return (u - p.c * v - p.k * x - p.k3 * x * x * x) / p.m - xg_ddot


def rk4_step(s: PlantState, u: float, xg_ddot: float, dt: float, p: PlantParams,
             step: int | None = None) -> tuple[PlantState, float]:
    """Classical RK4 advance; returns the new state and x'' evaluated there."""
    x, v = s
    m, c, k, k3 = p.m, p.c, p.k, p.k3

    def acc(x, v):
        return (u - c * v - k * x - k3 * x * x * x) / m - xg_ddot

    k1x, k1v = v, acc(x, v)
    k2x, k2v = v + 0.5 * dt * k1v, acc(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
    k3x, k3v = v + 0.5 * dt * k2v, acc(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
    k4x, k4v = v + dt * k3v, acc(x + dt * k3x, v + dt * k3v)
    x = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    a = acc(x, v)
    if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(a)) \
            or abs(x) > DIVERGENCE_LIMIT:
        raise PlantDivergence(step, (x, v))
    return PlantState(x, v), a


def mechanical_energy(s: PlantState, p: PlantParams) -> float:
    x, v = s
    return 0.5 * p.m * v * v + 0.5 * p.k * x * x + 0.25 * p.k3 * x ** 4

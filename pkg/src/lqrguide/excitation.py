"""Kanai-Tajimi ground acceleration records.

Band-limited white noise (one Gaussian draw per sample, held over the step)
drives the second-order filter

    xf'' + 2 zeta_g omega_g xf' + omega_g^2 xf = -w

and the ground acceleration is ``-(2 zeta_g omega_g xf' + omega_g^2 xf)``.
The noise comes from numpy's PCG64 bit generator seeded with the record
seed, and Gaussian draws use ``Generator.standard_normal``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DEFAULT_OMEGA_G = 15.56
DEFAULT_ZETA_G = 0.64


class ExcitationInputError(ValueError):
    """Non-finite filter state or noise sample."""


def intensity_for_rms(rms: float, omega_g: float = DEFAULT_OMEGA_G,
                      zeta_g: float = DEFAULT_ZETA_G) -> float:
    """White-noise intensity S0 giving a stationary output RMS of ``rms``.

    Uses the continuous Kanai-Tajimi variance pi*S0*omega_g*(1 + 4 zeta_g^2)/(2 zeta_g).
    """
    return rms * rms * 2.0 * zeta_g / (math.pi * omega_g * (1.0 + 4.0 * zeta_g ** 2))


DEFAULT_INTENSITY = intensity_for_rms(1.0)


@dataclass(frozen=True)
class KanaiTajimiParams:
    omega_g: float = DEFAULT_OMEGA_G
    zeta_g: float = DEFAULT_ZETA_G
    intensity: float = DEFAULT_INTENSITY
    dt: float = 0.02
    duration: float = 20.0

    def __post_init__(self):
        if not self.omega_g > 0:
            raise ValueError("omega_g must be > 0")
        if not 0 < self.zeta_g < 1:
            raise ValueError("zeta_g must lie in (0, 1)")
        # zero intensity is allowed: it yields the unforced (all-zero) record
        if not self.intensity >= 0:
            raise ValueError("intensity must be >= 0")
        if not (self.dt > 0 and self.duration > 0):
            raise ValueError("dt and duration must be > 0")

    @property
    def n_samples(self) -> int:
        return sample_count(self.duration, self.dt)

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.intensity * 2.0 * math.pi / self.dt)


def sample_count(duration: float, dt: float) -> int:
    """ceil(duration / dt), robust to representation error (20 / 0.02 -> 1000)."""
    return int(math.ceil(duration / dt - 1e-9))


class FilterState(NamedTuple):
    xf: float = 0.0
    vf: float = 0.0


def kanai_tajimi_step(state: FilterState, w: float, p: KanaiTajimiParams):
    """Advance the filter one RK4 step with ``w`` held; return (state, ground accel)."""
    xf, vf = state
    if not (math.isfinite(xf) and math.isfinite(vf) and math.isfinite(w)):
        raise ExcitationInputError(f"non-finite filter input: state={state}, w={w}")
    a1 = 2.0 * p.zeta_g * p.omega_g
    a0 = p.omega_g * p.omega_g
    h = p.dt

    def acc(x, v):
        return -w - a1 * v - a0 * x

    k1x, k1v = vf, acc(xf, vf)
    k2x, k2v = vf + 0.5 * h * k1v, acc(xf + 0.5 * h * k1x, vf + 0.5 * h * k1v)
    k3x, k3v = vf + 0.5 * h * k2v, acc(xf + 0.5 * h * k2x, vf + 0.5 * h * k2v)
    k4x, k4v = vf + h * k3v, acc(xf + h * k3x, vf + h * k3v)
    xf = xf + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    vf = vf + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return FilterState(xf, vf), -(a1 * vf + a0 * xf)


def white_noise(seed: int, n: int, p: KanaiTajimiParams) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(n) * p.noise_std


def filter_noise(noise, p: KanaiTajimiParams) -> np.ndarray:
    state = FilterState()
    out = np.empty(len(noise))
    for i, w in enumerate(np.asarray(noise, dtype=float).tolist()):
        state, out[i] = kanai_tajimi_step(state, w, p)
    return out


def generate_record(seed: int, p: KanaiTajimiParams, n_samples: int | None = None) -> np.ndarray:
    """Ground acceleration record of ceil(duration/dt) samples (or ``n_samples``)."""
    n = p.n_samples if n_samples is None else int(n_samples)
    return filter_noise(white_noise(seed, n, p), p)


def write_record_csv(path, record, dt: float) -> None:
    with open(path, "w") as fh:
        fh.write("t,xg_ddot\n")
        for i, a in enumerate(np.asarray(record, dtype=float).tolist()):
            fh.write(f"{i * dt:.15g},{a:.15g}\n")


def read_record_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]

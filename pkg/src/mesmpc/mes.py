"""Discrete multivariable extremum seeking.

Each learned parameter has its own sinusoidal dither channel. With sampling
period ``dt_mes`` and iteration counter ``h`` the update is

    z_i(h+1)         = z_i(h) + a_i * dt_mes * sin(w_i*h*dt_mes + pi/2) * Q
    delta_hat_i(h+1) = z_i(h+1) + a_i * sin(w_i*h*dt_mes - pi/2)

The phase uses ``w_i * h * dt_mes`` as written, so the frequency seen by the
discrete iteration is ``w_i * dt_mes`` folded into ``[0, pi]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import permutations

import numpy as np

FREQ_TOL = 1e-6


@dataclass(frozen=True)
class DitherChannel:
    a: float
    omega: float
    z: float = 0.0
    delta_hat: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise ValueError(f"dither amplitude must be positive, got {self.a}")
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError(f"dither frequency must be positive, got {self.omega}")


def effective_frequency(omega: float, dt_mes: float) -> float:
    """Per-iteration phase advance ``omega*dt_mes``, aliased into [0, pi]."""
    theta = math.fmod(omega * dt_mes, 2.0 * math.pi)
    return min(theta, 2.0 * math.pi - theta)


def _fold(theta: float) -> float:
    theta = math.fmod(theta, 2.0 * math.pi)
    return min(theta, 2.0 * math.pi - theta)


def frequency_violations(channels, dt_mes: float) -> list[str]:
    """Messages for every pair with equal effective frequency or triple with w_i + w_j = w_k."""
    th = [effective_frequency(c.omega, dt_mes) for c in channels]
    label = [c.name or f"channel {i}" for i, c in enumerate(channels)]
    out = []
    for i in range(len(th)):
        for j in range(i + 1, len(th)):
            if abs(th[i] - th[j]) < FREQ_TOL:
                out.append(
                    f"{label[i]} and {label[j]} share effective frequency {th[i]:.6g} rad/iteration"
                )
    for i, j, k in permutations(range(len(th)), 3):
        if i < j and abs(_fold(th[i] + th[j]) - th[k]) < FREQ_TOL:
            out.append(f"effective frequencies of {label[i]} + {label[j]} equal that of {label[k]}")
    return out


@dataclass(frozen=True)
class MesState:
    channels: tuple[DitherChannel, ...]
    dt_mes: float
    h: int = 0
    n_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not (math.isfinite(self.dt_mes) and self.dt_mes > 0):
            raise ValueError(f"dt_mes must be positive, got {self.dt_mes}")
        if self.h < 0:
            raise ValueError("iteration counter must be nonnegative")
        if not self.channels:
            raise ValueError("at least one dither channel is required")
        if self.n_max is not None and len(self.channels) > self.n_max:
            raise ValueError(
                f"{len(self.channels)} channels exceed the {self.n_max} uncertain model entries"
            )
        errs = frequency_violations(self.channels, self.dt_mes)
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def delta_hat(self) -> np.ndarray:
        return np.array([c.delta_hat for c in self.channels])

    @property
    def z(self) -> np.ndarray:
        return np.array([c.z for c in self.channels])


def mes_update(s: MesState, Q_value: float) -> MesState:
    Q_value = float(Q_value)
    if not math.isfinite(Q_value):
        raise ValueError(f"cost must be finite, got {Q_value}")
    if Q_value < 0:
        raise ValueError(f"cost must be nonnegative, got {Q_value}")
    new = []
    for c in s.channels:
        phase = c.omega * s.h * s.dt_mes
        z = c.z + c.a * s.dt_mes * math.sin(phase + math.pi / 2) * Q_value
        new.append(replace(c, z=z, delta_hat=z + c.a * math.sin(phase - math.pi / 2)))
    return MesState(tuple(new), s.dt_mes, s.h + 1, s.n_max)

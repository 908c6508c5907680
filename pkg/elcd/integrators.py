"""Fixed-step explicit integrators over plain arrays."""

from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericalError

Field = Callable[[np.ndarray], np.ndarray]


class Scheme(Enum):
    EULER = "euler"
    RK4 = "rk4"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError("integrator", f"unknown scheme {value!r} (choose euler or rk4)")


def euler_step(fn: Field, x: np.ndarray, dt: float) -> np.ndarray:
    return x + dt * fn(x)


def rk4_step(fn: Field, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = fn(x)
    k2 = fn(x + 0.5 * dt * k1)
    k3 = fn(x + 0.5 * dt * k2)
    k4 = fn(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {Scheme.EULER: euler_step, Scheme.RK4: rk4_step}


def integrate_array(fn: Field, x0: np.ndarray, dt: float, steps: int, scheme=Scheme.RK4,
                    record_every: int = 1, on_step: Optional[Callable[[int], None]] = None) -> np.ndarray:
    """States at steps 0, record_every, 2 * record_every, ... up to `steps`.

    Works for a single state (d,) or a batch (B, d); the time axis is
    prepended. Raises NumericalError naming the first step that produced a
    non-finite value.
    """
    step = STEPPERS[Scheme.parse(scheme)]
    x = np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError("initial state is not finite", step=0)
    recorded = [x.copy()]
    for i in range(1, steps + 1):
        x = step(fn, x, dt)
        if not np.all(np.isfinite(x)):
            raise NumericalError("state became non-finite, the field diverges", step=i)
        if i % record_every == 0:
            recorded.append(x.copy())
        if on_step is not None:
            on_step(i)
    return np.stack(recorded)

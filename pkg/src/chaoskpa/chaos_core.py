"""One-dimensional chaotic maps and orbit-to-byte keystreams.

Three maps are supported:

    Logistic   x' = mu * x * (1 - x)
    Sine       x' = sigma * sin(pi * x)
    Chebyshev  x' = cos(theta * arccos(x))

All arithmetic is plain binary64 through the ``math`` module, evaluated in
exactly the order written above, so a keystream is reproducible bit for bit.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from . import ParameterError

QUANT_SCALE = 1e14
DEFAULT_BURN_IN = 1000
CHAOTIC_LOGISTIC_THRESHOLD = 3.5699456


class MapFamily(str, enum.Enum):
    LOGISTIC = "logistic"
    SINE = "sine"
    CHEBYSHEV = "chebyshev"


@dataclass(frozen=True)
class ChaoticMapParams:
    """Key material for one chaotic map.

    ``control`` is mu (Logistic), sigma (Sine) or theta (Chebyshev);
    ``seed`` is the initial value x0.
    """

    family: MapFamily
    control: float
    seed: float
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self):
        object.__setattr__(self, "family", MapFamily(self.family))
        object.__setattr__(self, "control", float(self.control))
        object.__setattr__(self, "seed", float(self.seed))
        validate_params(self)

    @property
    def is_chaotic(self) -> bool:
        """Whether the control parameter lies in the map's chaotic regime."""
        if self.family is MapFamily.LOGISTIC:
            return CHAOTIC_LOGISTIC_THRESHOLD < self.control <= 4.0
        # sine is chaotic for most sigma close to 1; no sharp threshold to check
        if self.family is MapFamily.SINE:
            return self.control > 0.8655
        return self.control > 1.0

    def with_seed(self, seed: float) -> "ChaoticMapParams":
        return ChaoticMapParams(self.family, self.control, seed, self.burn_in)


def logistic(mu: float, x0: float, burn_in: int = DEFAULT_BURN_IN) -> ChaoticMapParams:
    return ChaoticMapParams(MapFamily.LOGISTIC, mu, x0, burn_in)


def sine(sigma: float, x0: float, burn_in: int = DEFAULT_BURN_IN) -> ChaoticMapParams:
    return ChaoticMapParams(MapFamily.SINE, sigma, x0, burn_in)


def chebyshev(theta: float, x0: float, burn_in: int = DEFAULT_BURN_IN) -> ChaoticMapParams:
    return ChaoticMapParams(MapFamily.CHEBYSHEV, theta, x0, burn_in)


def _check_control(family: MapFamily, control: float) -> None:
    if not math.isfinite(control):
        raise ParameterError(f"{family.value}: control parameter must be finite, got {control!r}")
    if family is MapFamily.LOGISTIC and not 0.0 <= control <= 4.0:
        raise ParameterError(f"logistic: mu must lie in [0, 4], got {control}")
    if family is MapFamily.SINE and not 0.0 < control <= 1.0:
        raise ParameterError(f"sine: sigma must lie in (0, 1], got {control}")
    if family is MapFamily.CHEBYSHEV and not control > 1.0:
        raise ParameterError(f"chebyshev: theta must exceed 1, got {control}")


def _check_state(family: MapFamily, x: float) -> None:
    if family is MapFamily.CHEBYSHEV:
        ok = -1.0 <= x <= 1.0
    else:
        ok = 0.0 <= x <= 1.0
    if not ok:
        raise ParameterError(f"{family.value}: state {x!r} outside the map's domain")


def validate_params(params: ChaoticMapParams) -> None:
    _check_control(params.family, params.control)
    s = params.seed
    if params.family is MapFamily.CHEBYSHEV:
        ok = -1.0 <= s <= 1.0
    else:
        ok = 0.0 < s < 1.0
    if not ok:
        raise ParameterError(f"{params.family.value}: seed {s!r} outside the valid range")
    if isinstance(params.burn_in, bool) or not isinstance(params.burn_in, (int, np.integer)) or params.burn_in < 0:
        raise ParameterError(f"burn_in must be a non-negative integer, got {params.burn_in!r}")


# Parameter choices used for the MNIST (Logistic) and CIFAR (hybrid) experiments.
DEFAULT_LOGISTIC = logistic(3.601, 0.1)
DEFAULT_SINE = sine(0.95, 0.154)
DEFAULT_CHEBYSHEV = chebyshev(5.0, 0.165)


def _stepper(family: MapFamily, c: float):
    if family is MapFamily.LOGISTIC:
        return lambda x: c * x * (1.0 - x)
    if family is MapFamily.SINE:
        pi, sin = math.pi, math.sin
        return lambda x: c * sin(pi * x)
    acos, cos = math.acos, math.cos
    return lambda x: cos(c * acos(x))


def map_step(params: ChaoticMapParams, x: float) -> float:
    """Apply one iteration of the map described by ``params`` to ``x``."""
    _check_control(params.family, params.control)
    x = float(x)
    _check_state(params.family, x)
    return _stepper(params.family, params.control)(x)


def orbit(params: ChaoticMapParams, n: int) -> List[float]:
    """Return iterates ``burn_in + 1 .. burn_in + n`` of the orbit from the seed."""
    if n < 1:
        raise ParameterError(f"orbit length must be >= 1, got {n}")
    validate_params(params)
    step = _stepper(params.family, params.control)
    x = params.seed
    for _ in range(params.burn_in):
        x = step(x)
    out = []
    for _ in range(n):
        x = step(x)
        out.append(x)
    if params.family is MapFamily.CHEBYSHEV:
        # acos raises on |x| > 1, so only the (0,1) maps need a range check here
        return out
    if not all(0.0 <= v <= 1.0 for v in out):
        raise ParameterError(f"{params.family.value}: orbit left [0, 1]")
    return out


def quantize(family: MapFamily, x: float) -> int:
    """Map one orbit value to a key byte: floor(normalized * 1e14) mod 256."""
    if family is MapFamily.CHEBYSHEV:
        x = (x + 1.0) / 2.0
    return math.floor(x * QUANT_SCALE) % 256


@dataclass(frozen=True)
class Keystream:
    data: bytes
    params: ChaoticMapParams

    @property
    def length(self) -> int:
        return len(self.data)

    def __len__(self):
        return len(self.data)

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8)


def keystream(params: ChaoticMapParams, length: int) -> Keystream:
    """Deterministic keystream of ``length`` bytes drawn from the map's orbit."""
    if length < 1:
        raise ParameterError(f"keystream length must be >= 1, got {length}")
    fam = params.family
    values = orbit(params, length)
    return Keystream(bytes(quantize(fam, v) for v in values), params)

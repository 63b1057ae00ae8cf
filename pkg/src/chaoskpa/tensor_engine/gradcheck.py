"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .tensor import Tensor, parameter, record_kinks

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-3
# denominators below this are treated as this; keeps round-off on ~0 gradients from dominating
REL_FLOOR = 1e-7


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    checked: int = 0
    excluded: int = 0
    worst: Optional[Tuple[str, int, float, float]] = None  # (array, flat index, analytic, numeric)
    per_array: Dict[str, float] = field(default_factory=dict)
    per_array_checked: Dict[str, int] = field(default_factory=dict)
    floor: float = REL_FLOOR

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tolerance

    @property
    def unprobed(self) -> List[str]:
        """Arrays for which every probe was excluded."""
        return sorted(k for k, n in self.per_array_checked.items() if n == 0)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        s = (f"{verdict}: max relative error {self.max_rel_error:.3e} (tol {self.tolerance:g}) "
             f"over {self.checked} probes, {self.excluded} excluded at kinks, floor {self.floor:.1e}")
        if self.unprobed:
            s += f"; no valid probe in {len(self.unprobed)} arrays"
        if self.worst is not None and not self.passed:
            name, idx, a, n = self.worst
            s += f"; worst {name}[{idx}] analytic={a:.6e} numeric={n:.6e}"
        return s


def rel_error(a: float, n: float, floor: float = REL_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def noise_floor(magnitude: float, step: float, tolerance: float) -> float:
    """Smallest derivative a central difference resolves to ``tolerance`` relative precision.

    ``magnitude`` bounds the rounding in one function evaluation in units of
    machine epsilon (e.g. sum of |terms| of the final reduction). Gradients
    below the returned value are compared at the rounding-noise level instead.
    """
    return max(REL_FLOOR, np.finfo(np.float64).eps * magnitude / (step * tolerance))


def _same_kinks(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable[[], Tensor], leaves: Dict[str, Tensor], tolerance: float = DEFAULT_TOL,
               step: float = DEFAULT_STEP, samples: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, floor: float = REL_FLOOR,
               retries: int = 2) -> GradCheckReport:
    """Compare backward() against central differences of a scalar function.

    ``fn`` rebuilds the scalar from ``leaves`` on every call, and must be
    deterministic. ``samples`` limits the probes per leaf array (all entries
    when None). Probes whose +/- perturbation flips a ReLU mask or a pooling
    argmax straddle a non-differentiable point; they are retried with the
    step divided by 10 up to ``retries`` times, then counted as excluded.
    """
    rng = rng or np.random.default_rng(0)
    for t in leaves.values():
        t.grad = None
    with record_kinks() as base_kinks:
        out = fn()
    out.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}

    report = GradCheckReport(tolerance, floor=floor)
    for name, t in leaves.items():
        flat = t.data.reshape(-1)
        if samples is None or samples >= flat.size:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=samples, replace=False)
        worst_here, n_here = 0.0, 0
        for i in idxs:
            orig = flat[i]
            num = None
            for r in range(retries + 1):
                h = step / 10 ** r
                flat[i] = orig + h
                with record_kinks() as kp:
                    fp = float(fn().data)
                flat[i] = orig - h
                with record_kinks() as km:
                    fm = float(fn().data)
                flat[i] = orig
                if _same_kinks(kp, base_kinks) and _same_kinks(km, base_kinks):
                    num = (fp - fm) / (2 * h)
                    break
            if num is None:
                report.excluded += 1
                continue
            a = float(analytic[name].reshape(-1)[i])
            # rounding noise in the difference grows as 1/h
            err = rel_error(a, num, floor * step / h)
            report.checked += 1
            n_here += 1
            worst_here = max(worst_here, err)
            if err >= report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, int(i), a, num)
        report.per_array_checked[name] = n_here
        report.per_array[name] = worst_here
    return report


def grad_check_model(model, x: np.ndarray, tolerance: float = DEFAULT_TOL, step: float = DEFAULT_STEP,
                     samples: Optional[int] = 4, input_samples: Optional[int] = 24,
                     seed: int = 0) -> GradCheckReport:
    """Gradient check of a whole ModelGraph in float64.

    Runs in train mode with frozen running statistics and a fixed dropout
    mask, so the network is a deterministic function of its parameters.
    """
    m = copy.deepcopy(model).astype(np.float64).train()
    m.update_bn_stats = False
    rng = np.random.default_rng(seed)
    xin = parameter(np.asarray(x, dtype=np.float64).copy())
    out_shape = m.infer_shapes(xin.shape)[m.output]
    weights = rng.standard_normal(out_shape)
    base = m.forward(xin, rng=np.random.default_rng(seed + 1)).data
    floor = noise_floor(float(np.abs(base * weights).sum()), step, tolerance)

    def fn():
        out = m.forward(xin, rng=np.random.default_rng(seed + 1))
        return ops.weighted_sum(out, weights)

    leaves = {"input": xin, **m.params}
    per_leaf = {k: (input_samples if k == "input" else samples) for k in leaves}
    report = GradCheckReport(tolerance, floor=floor)
    # one pass per sample budget so the input and parameters can use different counts
    for budget in sorted(set(per_leaf.values()), key=lambda v: (v is None, v)):
        subset = {k: v for k, v in leaves.items() if per_leaf[k] == budget}
        r = grad_check(fn, subset, tolerance, step, budget, rng, floor)
        report.checked += r.checked
        report.excluded += r.excluded
        report.per_array.update(r.per_array)
        report.per_array_checked.update(r.per_array_checked)
        if r.max_rel_error >= report.max_rel_error:
            report.max_rel_error = r.max_rel_error
            report.worst = r.worst
    return report

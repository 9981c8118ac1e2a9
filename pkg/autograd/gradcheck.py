"""
Finite-difference gradient checking.

grad_check compares the tape's analytic gradients with central differences
(f(x+eps) - f(x-eps)) / (2*eps) element by element, in the runtime's 32-bit
arithmetic by default. The relative error per element is
|a-n| / max(|a|, |n|, 1e-8); there is no absolute tolerance and no retry.

A float32 central difference resolves a gradient only when the function's
value is small next to eps times that gradient, so the check cases below
keep objectives near zero and operands bounded away from zero and kinks.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from autograd import ops
from autograd.tensor import Tensor, backward, no_grad, precision
from utils.logger import setup_logger

logger = setup_logger(__name__)

REL_ERR_FLOOR = 1e-8

@dataclass
class GradCheckReport:
    """Outcome of one grad_check call."""
    name: str
    max_rel_err: float
    passed: bool
    checked_elements: int = 0
    worst_input: Optional[int] = None

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28} {status}  max_rel_err={self.max_rel_err:.3e}  elements={self.checked_elements}"

def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERR_FLOOR)

def _central_difference(f: Callable[..., Tensor], inputs: Sequence[Tensor], which: int,
                        flat_index: int, eps: float) -> float:
    flat = inputs[which].data.reshape(-1)
    original = flat[flat_index]
    flat[flat_index] = original + eps
    high = float(flat[flat_index])
    plus = f(*inputs).item()
    flat[flat_index] = original - eps
    low = float(flat[flat_index])
    minus = f(*inputs).item()
    flat[flat_index] = original
    # x +- eps rounds in the working dtype; divide by the step actually taken
    return (plus - minus) / (high - low)

def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
               tol: float = 1e-3, dtype=np.float32,
               max_elements_per_input: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, name: str = "f") -> GradCheckReport:
    """
    Compare autodiff gradients of a scalar function with central differences.

    Args:
        f: deterministic function of the input tensors returning a one-element tensor
        inputs: leaf tensors to differentiate; restored unchanged on return
        eps: finite-difference step
        tol: largest accepted relative error
        dtype: working precision during the check (the runtime's float32 by default)
        max_elements_per_input: check a random subset of this many elements per input
        rng: generator for the subset (seeded 0 when omitted)
        name: label carried by the report

    Returns:
        GradCheckReport; failures are reported, not raised
    """
    rng = rng or np.random.default_rng(0)
    saved = [(t.data, t.grad, t.requires_grad) for t in inputs]
    max_err, checked, worst = 0.0, 0, None
    try:
        with precision(dtype):
            for t in inputs:
                t.data = np.array(t.data, dtype=dtype)
                t.grad = None
                t.requires_grad = True
            backward(f(*inputs))
            analytic = [t.grad.reshape(-1).copy() if t.grad is not None else np.zeros(t.size, dtype=dtype)
                        for t in inputs]

            with no_grad():
                for which, t in enumerate(inputs):
                    indices = np.arange(t.size)
                    if max_elements_per_input is not None and t.size > max_elements_per_input:
                        indices = np.sort(rng.choice(t.size, size=max_elements_per_input, replace=False))
                    for flat_index in indices:
                        numeric = _central_difference(f, inputs, which, flat_index, eps)
                        err = _rel_err(float(analytic[which][flat_index]), numeric)
                        checked += 1
                        if err > max_err:
                            max_err, worst = err, which
    finally:
        for t, (data, grad, requires_grad) in zip(inputs, saved):
            t.data, t.grad, t.requires_grad = data, grad, requires_grad

    report = GradCheckReport(name=name, max_rel_err=max_err, passed=max_err <= tol,
                             checked_elements=checked, worst_input=worst)
    logger.debug(report.summary())
    return report

# ============================================================================
# Random Inputs
# ============================================================================

# Operands of sums and products (conv, linear, mul, pools, reductions): small
# enough that every output stays far below eps times its gradient.
SMALL = 1e-3

def kink_safe_uniform(rng: np.random.Generator, shape: Sequence[int], margin: float = 0.05,
                      high: float = 0.15) -> np.ndarray:
    """Values in [-high, -margin] U [margin, high], clear of relu's kink by at least margin."""
    magnitude = rng.uniform(margin, high, size=shape)
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    return magnitude * sign

def distinct_values(rng: np.random.Generator, shape: Sequence[int], gap: float = 0.005) -> np.ndarray:
    """A shuffled ramp: every pair of elements differs by at least gap (no pooling ties)."""
    size = int(np.prod(shape))
    ramp = (np.arange(size) - size / 2.0) * gap
    return rng.permutation(ramp).reshape(shape)

def small_uniform(rng: np.random.Generator, shape: Sequence[int], scale: float = SMALL,
                  signed: bool = True) -> np.ndarray:
    """Magnitudes in [0.5, 1.5] * scale, random signs unless signed=False."""
    magnitude = rng.uniform(0.5, 1.5, size=shape) * scale
    if not signed:
        return magnitude
    return magnitude * np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)

def output_weights(rng: np.random.Generator, shape: Sequence[int], signed: bool = True) -> np.ndarray:
    """
    Weights of the checked objective, magnitude in [0.5, 1.5].

    Use signed=False when an input's gradient sums several weighted outputs
    (conv, linear, broadcasts, upsampling) so that the sum cannot cancel.
    """
    return small_uniform(rng, shape, scale=1.0, signed=signed)

def centered_objective(op: Callable[..., Tensor], inputs: Sequence[Tensor],
                       weights: np.ndarray) -> Callable[..., Tensor]:
    """
    f(*xs) = sum((op(*xs) - op(*inputs)) * weights), with op(*inputs) frozen now.

    The frozen offset leaves every gradient unchanged and keeps f at zero for
    the unperturbed inputs, so outputs a perturbation does not touch cancel
    exactly instead of adding float32 rounding to the difference.
    """
    with no_grad():
        offset = Tensor(-op(*inputs).data)
    w = Tensor(weights)
    return lambda *xs: ops.sum_all(ops.mul(ops.add(op(*xs), offset), w))

# ============================================================================
# Check Suite
# ============================================================================

CaseBuilder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[Tensor]]]

@dataclass
class CheckCase:
    """One named grad_check target; build() draws fresh random shapes and inputs."""
    name: str
    build: CaseBuilder
    eps: float = 1e-3
    max_elements_per_input: Optional[int] = None

def _dim(rng: np.random.Generator, low: int = 1, high: int = 8) -> int:
    return int(rng.integers(low, high + 1))

def _conv_case(rng):
    batch, cin, cout = _dim(rng, 1, 3), _dim(rng, 1, 4), _dim(rng, 1, 4)
    k, stride, padding = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    height, width = _dim(rng, k, 8), _dim(rng, k, 8)
    x = Tensor(small_uniform(rng, (batch, cin, height, width), signed=False))
    w = Tensor(small_uniform(rng, (cout, cin, k, k), signed=False))
    # bias on the scale of the products so outputs stay small
    b = Tensor(small_uniform(rng, (cout,), scale=SMALL ** 2, signed=False))

    def op(x, w, b):
        return ops.conv2d(x, w, b, stride, padding)

    r = output_weights(rng, ops.conv2d_shape(x.shape, w.shape, stride, padding), signed=False)
    return centered_objective(op, [x, w, b], r), [x, w, b]

def _unary_case(op, generator):
    def build(rng):
        shape = (_dim(rng, 1, 3), _dim(rng, 1, 4), _dim(rng), _dim(rng))
        x = Tensor(generator(rng, shape))
        return centered_objective(op, [x], output_weights(rng, shape)), [x]
    return build

def _pool_case(op, generator):
    def build(rng):
        window = int(rng.integers(1, 4))
        shape = (_dim(rng, 1, 2), _dim(rng, 1, 3), window * _dim(rng, 1, 3), window * _dim(rng, 1, 3))
        x = Tensor(generator(rng, shape))
        r = output_weights(rng, ops.pool_shape(shape, window))
        return centered_objective(lambda x: op(x, window), [x], r), [x]
    return build

def _global_avgpool_case(rng):
    shape = (_dim(rng, 1, 3), _dim(rng), _dim(rng), _dim(rng))
    x = Tensor(small_uniform(rng, shape))
    return centered_objective(ops.global_avgpool, [x], output_weights(rng, shape[:2])), [x]

def _linear_case(rng):
    batch, fan_in, fan_out = _dim(rng), _dim(rng), _dim(rng)
    x = Tensor(small_uniform(rng, (batch, fan_in), signed=False))
    w = Tensor(small_uniform(rng, (fan_in, fan_out), signed=False))
    b = Tensor(small_uniform(rng, (fan_out,), scale=SMALL ** 2, signed=False))
    r = output_weights(rng, (batch, fan_out), signed=False)
    return centered_objective(ops.linear, [x, w, b], r), [x, w, b]

def _binary_case(op):
    def build(rng):
        shape = (_dim(rng, 1, 3), _dim(rng, 1, 4), _dim(rng), _dim(rng))
        # second operand trailing-aligned, repeated along leading dims
        tail = shape[int(rng.integers(0, len(shape))):]
        a = Tensor(small_uniform(rng, shape, signed=False))
        b = Tensor(small_uniform(rng, tail, signed=False))
        return centered_objective(op, [a, b], output_weights(rng, shape, signed=False)), [a, b]
    return build

def _concat_case(rng):
    axis = int(rng.integers(0, 4))
    base = [_dim(rng, 1, 3), _dim(rng, 1, 4), _dim(rng), _dim(rng)]
    count = int(rng.integers(1, 4))
    tensors = []
    for _ in range(count):
        shape = list(base)
        shape[axis] = _dim(rng, 1, 4)
        tensors.append(Tensor(small_uniform(rng, shape)))
    r = output_weights(rng, ops.concat_shape([t.shape for t in tensors], axis))
    return centered_objective(lambda *ts: ops.concat(list(ts), axis), tensors, r), tensors

def _upsample_case(rng):
    fh, fw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    shape = (_dim(rng, 1, 2), _dim(rng, 1, 3), _dim(rng, 1, 4), _dim(rng, 1, 4))
    x = Tensor(small_uniform(rng, shape))
    r = output_weights(rng, ops.upsample_shape(shape, fh, fw), signed=False)
    return centered_objective(lambda x: ops.upsample_nearest(x, fh, fw), [x], r), [x]

def _reshape_case(rng):
    shape = (_dim(rng), _dim(rng), _dim(rng))
    target = (shape[0] * shape[1], shape[2])
    x = Tensor(small_uniform(rng, shape))
    return centered_objective(lambda x: ops.reshape(x, target), [x], output_weights(rng, target)), [x]

def _reduction_case(op):
    def build(rng):
        x = Tensor(small_uniform(rng, (_dim(rng), _dim(rng))))
        return (lambda x: ops.scale(op(x), 1.7)), [x]
    return build

PRIMITIVE_CASES: List[CheckCase] = [
    CheckCase("conv2d", _conv_case),
    CheckCase("relu", _unary_case(ops.relu, kink_safe_uniform)),
    CheckCase("sigmoid", _unary_case(ops.sigmoid, kink_safe_uniform)),
    CheckCase("maxpool2d", _pool_case(ops.maxpool2d, distinct_values)),
    CheckCase("avgpool2d", _pool_case(ops.avgpool2d, small_uniform)),
    CheckCase("global_avgpool", _global_avgpool_case),
    CheckCase("linear", _linear_case),
    CheckCase("add", _binary_case(ops.add)),
    CheckCase("mul", _binary_case(ops.mul)),
    CheckCase("concat", _concat_case),
    CheckCase("upsample_nearest", _upsample_case),
    CheckCase("reshape", _reshape_case),
    CheckCase("sum", _reduction_case(ops.sum_all)),
    CheckCase("mean", _reduction_case(ops.mean)),
]

@dataclass
class SuiteResult:
    """Worst relative error per case over all trials."""
    reports: List[GradCheckReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

def run_suite(trials: int = 20, seed: int = 0, cases: Optional[Sequence[CheckCase]] = None,
              tol: float = 1e-3, dtype=np.float32) -> SuiteResult:
    """
    Run every case for `trials` random draws and keep the worst report per case.

    Args:
        trials: random shapes per case
        seed: base seed; trial t of case i uses default_rng([seed, i, t])
        cases: cases to run (primitive ops when omitted)
        tol: relative error threshold
        dtype: arithmetic the cases are built and checked in

    Returns:
        SuiteResult with one report per case
    """
    cases = PRIMITIVE_CASES if cases is None else cases
    result = SuiteResult()
    for case_index, case in enumerate(cases):
        worst = GradCheckReport(name=case.name, max_rel_err=0.0, passed=True)
        for trial in range(trials):
            rng = np.random.default_rng([seed, case_index, trial])
            with precision(dtype):
                f, inputs = case.build(rng)
            report = grad_check(f, inputs, eps=case.eps, tol=tol, dtype=dtype,
                                max_elements_per_input=case.max_elements_per_input,
                                rng=rng, name=case.name)
            worst.checked_elements += report.checked_elements
            if report.max_rel_err >= worst.max_rel_err:
                worst.max_rel_err = report.max_rel_err
                worst.worst_input = report.worst_input
            worst.passed = worst.passed and report.passed
        result.reports.append(worst)
        logger.info(worst.summary())
    return result

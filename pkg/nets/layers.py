"""
Step programs: the shared description of every network in the engine.

A Program is an ordered list of Steps over named registers plus the shapes
of its parameters. Model runs a Program on tensors; trace() runs the same
Program on shapes only, which is how the memory estimator predicts the
activation bytes a forward pass will stash without allocating anything.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from autograd import ops
from autograd.tensor import Tensor, parameter
from utils.error_manager import ModelBuildError
from utils.logger import setup_logger

logger = setup_logger(__name__)

Shape = Tuple[int, ...]

INPUT = "x"

# Step opcodes
CONV = "conv"
RELU = "relu"
MAXPOOL = "maxpool"
GAP = "gap"
LINEAR = "linear"
UPSAMPLE = "upsample"
CONCAT = "concat"

@dataclass(frozen=True)
class Step:
    """One op reading `inputs` registers and writing `output`."""
    op: str
    inputs: Tuple[str, ...]
    output: str
    layer: Optional[str] = None  # parameter prefix for conv / linear
    padding: int = 0
    window: int = 2

@dataclass
class Program:
    """Ordered steps, parameter shapes and the register holding the result."""
    name: str
    steps: List[Step] = field(default_factory=list)
    param_shapes: Dict[str, Shape] = field(default_factory=dict)
    output: str = INPUT

    def conv(self, src: str, dst: str, layer: str, cin: int, cout: int, kernel: int) -> None:
        self.param_shapes[f"{layer}.weight"] = (cout, cin, kernel, kernel)
        self.param_shapes[f"{layer}.bias"] = (cout,)
        self.steps.append(Step(CONV, (src,), dst, layer=layer, padding=kernel // 2))
        self.output = dst

    def linear(self, src: str, dst: str, layer: str, fan_in: int, fan_out: int) -> None:
        self.param_shapes[f"{layer}.weight"] = (fan_in, fan_out)
        self.param_shapes[f"{layer}.bias"] = (fan_out,)
        self.steps.append(Step(LINEAR, (src,), dst, layer=layer))
        self.output = dst

    def add(self, op: str, inputs: Sequence[str], dst: str, window: int = 2) -> None:
        self.steps.append(Step(op, tuple(inputs), dst, window=window))
        self.output = dst

def count_parameters(program: Program) -> int:
    """Element count over every parameter, without allocating them."""
    return int(sum(int(np.prod(shape)) for shape in program.param_shapes.values()))

def trace(program: Program, input_shape: Shape) -> List[Tuple[str, Shape]]:
    """
    Output shape of every step, in execution order.

    Raises:
        DimensionError: the input shape does not fit the program
    """
    shapes: Dict[str, Shape] = {INPUT: tuple(input_shape)}
    produced: List[Tuple[str, Shape]] = []
    for step in program.steps:
        src = [shapes[name] for name in step.inputs]
        if step.op == CONV:
            out = ops.conv2d_shape(src[0], program.param_shapes[f"{step.layer}.weight"], 1, step.padding)
        elif step.op == RELU:
            out = src[0]
        elif step.op == MAXPOOL:
            out = ops.pool_shape(src[0], step.window)
        elif step.op == GAP:
            out = ops.global_avgpool_shape(src[0])
        elif step.op == LINEAR:
            out = ops.linear_shape(src[0], program.param_shapes[f"{step.layer}.weight"])
        elif step.op == UPSAMPLE:
            out = ops.upsample_shape(src[0], step.window, step.window)
        elif step.op == CONCAT:
            out = ops.concat_shape(src, 1)
        else:
            raise ModelBuildError(f"unknown step op '{step.op}' in {program.name}")
        shapes[step.output] = out
        produced.append((step.op, out))
    return produced

# ============================================================================
# Initialization
# ============================================================================

def kaiming_uniform(rng: np.random.Generator, shape: Shape) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in); fan_in is every dim but the output one."""
    if len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
    else:
        fan_in = shape[0]
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)

# ============================================================================
# Model
# ============================================================================

class Model:
    """
    A Program bound to parameter tensors.

    Parameters are created in the Program's declaration order; names are
    unique within the model.
    """

    def __init__(self, program: Program, params: Dict[str, Tensor]):
        missing = set(program.param_shapes) - set(params)
        if missing:
            raise ModelBuildError(f"{program.name}: missing parameters {sorted(missing)}")
        for name, shape in program.param_shapes.items():
            if params[name].shape != tuple(shape):
                raise ModelBuildError(
                    f"{program.name}: parameter {name} has shape {list(params[name].shape)}, expected {list(shape)}"
                )
        self.program = program
        self.params = {name: params[name] for name in program.param_shapes}

    @classmethod
    def initialize(cls, program: Program, seed: int = 0) -> "Model":
        """Kaiming-uniform weights, zero biases, drawn from default_rng(seed)."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in program.param_shapes.items():
            if name.endswith(".bias"):
                data = np.zeros(shape)
            else:
                data = kaiming_uniform(rng, shape)
            params[name] = parameter(data, name=f"{program.name}.{name}")
        logger.debug(f"Initialized {program.name} with {count_parameters(program)} parameters")
        return cls(program, params)

    @property
    def name(self) -> str:
        return self.program.name

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        """(qualified name, tensor) pairs; qualified names carry the model name."""
        for name, tensor in self.params.items():
            yield f"{self.program.name}.{name}", tensor

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        registers: Dict[str, Tensor] = {INPUT: x}
        for step in self.program.steps:
            src = [registers[name] for name in step.inputs]
            if step.op == CONV:
                out = ops.conv2d(src[0], self.params[f"{step.layer}.weight"],
                                 self.params[f"{step.layer}.bias"], 1, step.padding)
            elif step.op == RELU:
                out = ops.relu(src[0])
            elif step.op == MAXPOOL:
                out = ops.maxpool2d(src[0], step.window)
            elif step.op == GAP:
                out = ops.global_avgpool(src[0])
            elif step.op == LINEAR:
                out = ops.linear(src[0], self.params[f"{step.layer}.weight"],
                                 self.params[f"{step.layer}.bias"])
            elif step.op == UPSAMPLE:
                out = ops.upsample_nearest(src[0], step.window, step.window)
            elif step.op == CONCAT:
                out = ops.concat(src, axis=1)
            else:
                raise ModelBuildError(f"unknown step op '{step.op}' in {self.program.name}")
            registers[step.output] = out
        return registers[self.program.output]

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Overwrite parameters from qualified-name arrays (shapes must match)."""
        for name, tensor in self.named_parameters():
            if name not in arrays:
                raise ModelBuildError(f"checkpoint has no parameter '{name}'")
            data = np.asarray(arrays[name])
            if data.shape != tensor.shape:
                raise ModelBuildError(
                    f"parameter '{name}' has shape {list(data.shape)} in the checkpoint, expected {list(tensor.shape)}"
                )
            tensor.data = np.ascontiguousarray(data, dtype=tensor.data.dtype)

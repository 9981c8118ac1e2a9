"""
AdamW with decoupled weight decay and the warmup + linear-decay schedule.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from autograd.tensor import Tensor
from patches.grid import PatchPlan
from utils.config import ACCUM_CAP, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, CLASSIFICATION, DEFAULT_WEIGHT_DECAY, RunConfig
from utils.error_manager import ConfigError, NonFiniteGradientError
from utils.logger import setup_logger

logger = setup_logger(__name__)

WARMUP_FRACTION = 0.1

@dataclass
class TrainConfig:
    """Optimizer and schedule settings of one training run."""
    task: str = CLASSIFICATION
    base_lr: float = 1e-3
    warmup_steps: int = 0
    total_steps: int = 1
    batch_size: int = 4
    accum_steps: int = 1
    plan: Optional[PatchPlan] = None
    seed: int = 0
    memory_budget_bytes: Optional[int] = None
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    def __post_init__(self):
        violations = []
        cap = ACCUM_CAP.get(self.task, 1)
        if not 1 <= self.accum_steps <= cap:
            violations.append(f"accum_steps: must lie in [1, {cap}] for {self.task}, got {self.accum_steps}")
        if self.total_steps < 1:
            violations.append(f"total_steps: must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps < self.total_steps:
            violations.append(f"warmup_steps: must lie in [0, total_steps), got {self.warmup_steps}")
        if self.batch_size < 1:
            violations.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if violations:
            raise ConfigError(violations)

    @classmethod
    def from_run_config(cls, run_config: RunConfig, total_steps: int,
                        plan: Optional[PatchPlan] = None) -> "TrainConfig":
        """Derive the schedule for `total_steps` optimizer steps."""
        total_steps = max(1, int(total_steps))
        warmup = run_config.warmup_steps
        if warmup is None:
            warmup = derive_warmup(total_steps)
        warmup = min(warmup, total_steps - 1)
        return cls(task=run_config.task, base_lr=run_config.base_lr, warmup_steps=warmup,
                   total_steps=total_steps, batch_size=run_config.batch_size,
                   accum_steps=run_config.accum_steps, plan=plan, seed=run_config.seed,
                   memory_budget_bytes=run_config.memory_budget_bytes,
                   weight_decay=run_config.weight_decay, beta1=run_config.beta1,
                   beta2=run_config.beta2, eps=run_config.adam_eps)

def derive_warmup(total_steps: int) -> int:
    """Ten percent of the run (at least one step), strictly below total_steps."""
    if total_steps <= 1:
        return 0
    return min(max(1, int(total_steps * WARMUP_FRACTION)), total_steps - 1)

def lr_at(step: int, cfg: TrainConfig) -> float:
    """
    Linear warmup to base_lr over warmup_steps, then linear decay to
    base_lr / (total - warmup) at the last step. Steps outside
    [0, total_steps) are clamped.
    """
    step = min(max(int(step), 0), cfg.total_steps - 1)
    if step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    return cfg.base_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)

# ============================================================================
# AdamW
# ============================================================================

@dataclass
class OptimizerState:
    """First/second moments per parameter name and the number of steps taken."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: Dict[str, Tensor]) -> "OptimizerState":
        return cls(m={name: np.zeros_like(p.data) for name, p in params.items()},
                   v={name: np.zeros_like(p.data) for name, p in params.items()})

    @property
    def nbytes(self) -> int:
        return sum(4 * a.size for a in self.m.values()) + sum(4 * a.size for a in self.v.values())

def adamw_step(params: Dict[str, Tensor], state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """
    One bias-corrected AdamW update over every parameter, in ascending name order,
    then zero the gradients. A missing gradient counts as zero.

    Raises:
        NonFiniteGradientError: a gradient holds NaN or infinity (nothing is updated)
    """
    names = sorted(params)
    for name in names:
        grad = params[name].grad
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    state.step += 1
    t = state.step
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    for name in names:
        p = params[name]
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + cfg.eps) + cfg.weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
        p.zero_grad()

class AdamW:
    """Owns the moment buffers of a fixed parameter set."""

    def __init__(self, params: Dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.state = OptimizerState.for_params(params)

    def step(self, lr: float) -> None:
        adamw_step(self.params, self.state, lr, self.cfg)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

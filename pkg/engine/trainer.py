"""
Training loops.

One outer step processes one image batch. For the patch model it runs J
inner iterations; each one samples k unseen patches per image, refreshes
those cells of the image's Z-block, recomputes the global-patch feature,
aggregates, and back-propagates the loss. Gradients accumulate in the
parameters' .grad buffers and an optimizer step is taken after every
accum_steps inner iterations and after the last one.

Memory: parameters, gradients and optimizer moments are allocated when the
trainer is created and recorded in the ledger by start(); per-step data,
Z-cache and tape activations are recorded as they appear and released before
the outer step returns.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from autograd.tensor import Tensor, backward, element_bytes, get_graph
from engine.losses import cross_entropy, seg_loss
from engine.models import DownsampledModel, InputSpec, PatchModel, build_model, downsample_masks
from engine.optim import AdamW, TrainConfig, lr_at
from memory.ledger import Category, MemoryLedger
from metrics.report import MetricsReport
from patches.grid import PatchPlan, extract_patches
from patches.sampler import sample_outer_step
from utils.config import CLASSIFICATION, RunConfig
from utils.logger import setup_logger

logger = setup_logger(__name__)

LOG_HEADER = "outer_step,inner_iter,lr,loss,peak_bytes"

@dataclass
class TrainReport:
    """Outcome of a fit() call."""
    epoch_losses: List[float] = field(default_factory=list)
    final_metrics: Optional[MetricsReport] = None
    peak_bytes: int = 0
    wall_time: float = 0.0
    outer_steps: int = 0
    optimizer_steps: int = 0
    parameter_count: int = 0

class TrainingLog:
    """One CSV line per inner iteration, kept in memory and optionally streamed to a file."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.lines: List[str] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(LOG_HEADER + "\n", encoding="utf-8")

    def append(self, outer_step: int, inner_iter: int, lr: float, loss: float, peak_bytes: int) -> None:
        line = f"{outer_step},{inner_iter},{lr:.8e},{loss:.8f},{peak_bytes}"
        self.lines.append(line)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

def optimizer_steps_per_outer(inner_iterations: int, accum_steps: int) -> int:
    return math.ceil(inner_iterations / accum_steps)

def total_optimizer_steps(run_config: RunConfig, dataset_size: int, epochs: Optional[int] = None) -> int:
    """epochs x batches per epoch x ceil(J / accum_steps)."""
    epochs = run_config.epochs if epochs is None else epochs
    batches = math.ceil(dataset_size / run_config.batch_size)
    return max(1, epochs * batches * optimizer_steps_per_outer(run_config.inner_iterations, run_config.accum_steps))

# ============================================================================
# Base Trainer
# ============================================================================

class Trainer:
    """
    Shared machinery: parameter registry, optimizer, schedule, ledger and log.

    Subclasses implement _inner_iteration (forward to a scalar loss) and the
    per-outer-step setup and teardown.
    """

    def __init__(self, run_config: RunConfig, inputs: InputSpec, total_steps: int,
                 ledger: Optional[MemoryLedger] = None, log_path: Optional[Union[str, Path]] = None):
        self.run_config = run_config
        self.inputs = inputs
        self.model = build_model(run_config, inputs)
        self.params: Dict[str, Tensor] = self.model.named_parameters()
        self.cfg = TrainConfig.from_run_config(run_config, total_steps, self.plan)
        self.ledger = ledger or MemoryLedger()
        self.log = TrainingLog(log_path)
        self.rng = np.random.default_rng([run_config.seed, 2])
        self.global_step = 0
        self.outer_step_count = 0

        for p in self.params.values():
            p.grad = np.zeros_like(p.data)
        self.optimizer = AdamW(self.params, self.cfg)
        self.started = False
        logger.info(f"{type(self).__name__}: {self.model.parameter_count} parameters, "
                    f"{self.cfg.total_steps} optimizer steps, warmup {self.cfg.warmup_steps}")

    @property
    def plan(self) -> Optional[PatchPlan]:
        return None

    @property
    def inner_iterations(self) -> int:
        return self.run_config.inner_iterations

    def start(self) -> None:
        """
        Attach the ledger to the tape, set the budget and record the resident buffers.

        Raises:
            BudgetExceededError: parameters, gradients and moments alone exceed the budget
        """
        if self.started:
            return
        self.started = True
        graph = get_graph()
        graph.clear()
        self.ledger.attach(graph)
        self.ledger.enforce_budget(self.run_config.memory_budget_bytes)
        with self.ledger.in_phase("setup"):
            param_bytes = sum(p.nbytes for p in self.params.values())
            self.ledger.record(Category.PARAMETERS, param_bytes)
            self.ledger.record(Category.GRADIENTS, param_bytes)
            self.ledger.record(Category.OPTIMIZER_STATE, self.optimizer.state.nbytes)

    def close(self) -> None:
        """Stop accounting tape events (parameters stay recorded)."""
        self.ledger.detach(get_graph())

    def _allocate(self, category: Category, nbytes: int, phase: str) -> int:
        self.ledger.record(category, nbytes, phase)
        return nbytes

    def _target_bytes(self, targets: np.ndarray) -> int:
        return element_bytes(np.shape(targets))

    def _loss(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        if self.run_config.task == CLASSIFICATION:
            return cross_entropy(logits, targets)
        return seg_loss(logits, targets)

    def outer_step(self, images: np.ndarray, targets: np.ndarray) -> List[float]:
        """
        Train on one batch; returns the loss of every inner iteration.

        Raises:
            BudgetExceededError: a recorded allocation would exceed the budget
            NonFiniteGradientError: a gradient became NaN or infinite
        """
        self.start()
        images = np.asarray(images, dtype=np.float32)
        losses: List[float] = []
        try:
            self._begin_outer(images, targets)
            J = self.inner_iterations
            for j in range(J):
                loss = self._inner_iteration(j)
                with self.ledger.in_phase("backward"):
                    backward(loss)
                self._end_inner(j)
                lr = lr_at(self.global_step, self.cfg)
                if (j + 1) % self.cfg.accum_steps == 0 or j == J - 1:
                    with self.ledger.in_phase("optimizer"):
                        self.optimizer.step(lr)
                    self.global_step += 1
                value = loss.item()
                losses.append(value)
                self.log.append(self.outer_step_count, j, lr, value, self.ledger.peak)
        finally:
            get_graph().clear()
            self._end_outer()
        self.outer_step_count += 1
        return losses

    def _begin_outer(self, images: np.ndarray, targets: np.ndarray) -> None:
        raise NotImplementedError

    def _inner_iteration(self, j: int) -> Tensor:
        raise NotImplementedError

    def _end_inner(self, j: int) -> None:
        pass

    def _end_outer(self) -> None:
        with self.ledger.in_phase("teardown"):
            self.ledger.release_category(Category.DATA)
            self.ledger.release_category(Category.Z_CACHE)

    def fit(self, dataset, epochs: Optional[int] = None, progress: bool = True) -> TrainReport:
        """Epoch loop over seeded shuffles of the dataset."""
        epochs = self.run_config.epochs if epochs is None else epochs
        report = TrainReport(parameter_count=self.model.parameter_count)
        shuffle_rng = np.random.default_rng([self.run_config.seed, 1])
        start = time.perf_counter()
        for epoch in range(epochs):
            batch_losses = []
            batches = list(dataset.batches(self.run_config.batch_size, shuffle_rng))
            for indices in tqdm(batches, desc=f"epoch {epoch + 1}/{epochs}", leave=False,
                                disable=not progress):
                losses = self.outer_step(dataset.images[indices], dataset.targets[indices])
                batch_losses.append(float(np.mean(losses)))
            report.epoch_losses.append(float(np.mean(batch_losses)))
            if (epoch + 1) % self.run_config.log_every == 0 or epoch == epochs - 1:
                logger.info(f"Epoch {epoch + 1}/{epochs}: loss={report.epoch_losses[-1]:.4f}, "
                            f"lr={lr_at(self.global_step, self.cfg):.2e}, peak={self.ledger.peak} B")
        report.wall_time = time.perf_counter() - start
        report.peak_bytes = self.ledger.peak
        report.outer_steps = self.outer_step_count
        report.optimizer_steps = self.global_step
        return report

# ============================================================================
# Patch Trainer
# ============================================================================

class PatchTrainer(Trainer):
    """Sampled-patch training with a per-image Z-block."""

    model: PatchModel

    def __init__(self, run_config: RunConfig, inputs: InputSpec, total_steps: int,
                 ledger: Optional[MemoryLedger] = None, log_path: Optional[Union[str, Path]] = None):
        self._plan: Optional[PatchPlan] = None
        super().__init__(run_config, inputs, total_steps, ledger, log_path)

    @property
    def plan(self) -> PatchPlan:
        if self._plan is None:
            self._plan = PatchPlan(self.model.grid, self.run_config.sampling_rate,
                                   self.run_config.inner_iterations)
        return self._plan

    def _begin_outer(self, images: np.ndarray, targets: np.ndarray) -> None:
        model = self.model
        self._images = images
        self._targets = targets
        with self.ledger.in_phase("data"):
            self._allocate(Category.DATA, element_bytes(images.shape) + self._target_bytes(targets), "data")
        self._zblocks = [model.new_zblock() for _ in images]
        self._allocate(Category.Z_CACHE, sum(z.nbytes for z in self._zblocks), "z_init")
        self._global = None
        if model.use_global:
            self._global = model.global_pixels(images)
            self._allocate(Category.DATA, element_bytes(self._global.shape), "data")
        self._schedule = [sample_outer_step(self.rng, self.plan) for _ in images]
        self._patch_bytes = 0

    def _inner_iteration(self, j: int) -> Tensor:
        model, k = self.model, self.plan.k
        with self.ledger.in_phase("patch"):
            pixels = np.concatenate([extract_patches(image, model.grid, self._schedule[b][j])
                                     for b, image in enumerate(self._images)])
            self._patch_bytes = self._allocate(Category.DATA, element_bytes(pixels.shape), "patch")
            features = model.backbone(Tensor(pixels))
            for b, z in enumerate(self._zblocks):
                z.update(self._schedule[b][j], features, rows=range(b * k, (b + 1) * k))
            g = model.backbone(Tensor(self._global)) if self._global is not None else None
        with self.ledger.in_phase("aggregate"):
            logits = model.aggregate(self._zblocks, g)
            return self._loss(logits, self._targets)

    def _end_inner(self, j: int) -> None:
        for z in self._zblocks:
            z.sources = []
        self.ledger.record(Category.DATA, -self._patch_bytes, "patch")
        self._patch_bytes = 0

    def _end_outer(self) -> None:
        self._zblocks = []
        self._images = self._targets = self._global = None
        super()._end_outer()

# ============================================================================
# Downsampled Baseline Trainer
# ============================================================================

class DownsampledTrainer(Trainer):
    """
    theta1 + head on area-downsampled images with the patch trainer's
    J / accumulation schedule, so both spend the same optimizer steps.
    """

    model: DownsampledModel

    def _begin_outer(self, images: np.ndarray, targets: np.ndarray) -> None:
        model = self.model
        self._small = model.downsample(images)
        if self.run_config.task == CLASSIFICATION:
            self._targets = targets
        else:
            self._targets = downsample_masks(np.asarray(targets, dtype=np.float32), model.factor)
        self._allocate(Category.DATA, element_bytes(self._small.shape) + self._target_bytes(self._targets), "data")

    def _inner_iteration(self, j: int) -> Tensor:
        with self.ledger.in_phase("forward"):
            return self._loss(self.model.forward(self._small), self._targets)

    def _end_outer(self) -> None:
        self._small = self._targets = None
        super()._end_outer()

def make_trainer(run_config: RunConfig, inputs: InputSpec, total_steps: int,
                 ledger: Optional[MemoryLedger] = None,
                 log_path: Optional[Union[str, Path]] = None) -> Trainer:
    if run_config.mode == "downsampled":
        return DownsampledTrainer(run_config, inputs, total_steps, ledger, log_path)
    return PatchTrainer(run_config, inputs, total_steps, ledger, log_path)

# ============================================================================
# Single Outer Steps
# ============================================================================

def train_outer_step_cls(trainer: PatchTrainer, images: np.ndarray, labels: np.ndarray) -> List[float]:
    """One classification outer step: J inner iterations over sampled patches."""
    return trainer.outer_step(images, labels)

def train_outer_step_seg(trainer: PatchTrainer, images: np.ndarray, masks: np.ndarray) -> List[float]:
    """One segmentation outer step: canvas Z, concat fusion, bce + dice."""
    return trainer.outer_step(images, masks)

"""
Analytic peak-memory estimator.

Replays the ledger events a training run would record, using the same
network programs as the trainer and their shape traces instead of real
tensors. Nothing is allocated, so configurations far larger than the
machine can hold are estimated as cheaply as desk-scale ones.

Event order of one inner iteration (patch mode):
    setup      parameters, gradients, 2x Adam moments
    data       image batch + targets
    z_init     one Z-block per image
    data       global-patch pixels (when enabled)
    patch      k patch pixels per image, theta1 on the patch batch and on the global patches
    aggregate  stacked Z, fusion, theta2, loss
    backward   releases every activation
The ledger peak is the running total at the end of the aggregate phase.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from autograd.tensor import element_bytes
from engine.losses import cross_entropy_trace, seg_loss_trace
from engine.models import InputSpec, downsampled_specs, patch_specs
from memory.ledger import Category, format_bytes
from nets.layers import Program, count_parameters, trace
from nets.aggregators import aggregator_program
from nets.backbones import backbone_program
from utils.config import CLASSIFICATION, RunConfig
from utils.logger import setup_logger

logger = setup_logger(__name__)

Shape = Tuple[int, ...]

@dataclass
class ConfigEstimate:
    """Predicted ledger of one configuration."""
    mode: str
    batch_size: int
    parameter_count: int
    categories: Dict[Category, int] = field(default_factory=dict)
    phases: List[Tuple[str, int]] = field(default_factory=list)
    theta1_activation_bytes: int = 0

    @property
    def peak_bytes(self) -> int:
        """Maximum over the running totals at each phase end."""
        return max((total for _, total in self.phases), default=0)

    def render(self) -> str:
        lines = [f"mode={self.mode} batch={self.batch_size} parameters={self.parameter_count}",
                 f"{'category':<16}  {'bytes':>14}"]
        for category, nbytes in self.categories.items():
            lines.append(f"{category.value:<16}  {nbytes:>14}")
        lines.append(f"{'phase':<16}  {'running total':>14}")
        for phase, total in self.phases:
            lines.append(f"{phase:<16}  {total:>14}")
        lines.append(f"estimated peak {self.peak_bytes} bytes ({format_bytes(self.peak_bytes)})")
        return "\n".join(lines) + "\n"

class _Replay:
    """Running category totals with a phase-end snapshot list."""

    def __init__(self):
        self.current: Dict[Category, int] = {c: 0 for c in Category}
        self.phases: List[Tuple[str, int]] = []

    def add(self, category: Category, nbytes: int) -> None:
        self.current[category] += int(nbytes)

    def end_phase(self, phase: str) -> None:
        self.phases.append((phase, sum(self.current.values())))

def trace_bytes(steps: List[Tuple[str, Shape]]) -> int:
    return sum(element_bytes(shape) for _, shape in steps)

def _resident(replay: _Replay, programs: List[Program]) -> int:
    count = sum(count_parameters(p) for p in programs)
    param_bytes = element_bytes((count,))
    replay.add(Category.PARAMETERS, param_bytes)
    replay.add(Category.GRADIENTS, param_bytes)
    replay.add(Category.OPTIMIZER_STATE, 2 * param_bytes)
    replay.end_phase("setup")
    return count

def _loss_trace(task: str, logits_shape: Shape) -> List[Tuple[str, Shape]]:
    if task == CLASSIFICATION:
        return cross_entropy_trace(logits_shape)
    return seg_loss_trace(logits_shape)

def _target_shape(task: str, batch: int, height: int, width: int) -> Shape:
    return (batch,) if task == CLASSIFICATION else (batch, 1, height, width)

def _fusion_trace(run_config: RunConfig, stacked: Shape) -> List[Tuple[str, Shape]]:
    """Nodes recorded between stack_zblocks and theta2."""
    if not run_config.use_global_patch:
        return []
    batch, channels, height, width = stacked
    if run_config.task != CLASSIFICATION:
        return [("upsample_nearest", stacked), ("concat", (batch, 2 * channels, height, width))]
    if run_config.fusion == "concat":
        return [("reshape", (batch, channels, 1, 1)), ("upsample_nearest", stacked),
                ("concat", (batch, 2 * channels, height, width))]
    return [("reshape", (batch, channels, 1, 1)), ("add", stacked)]

def _estimate_patch(run_config: RunConfig, inputs: InputSpec, batch: int) -> ConfigEstimate:
    grid, backbone_spec, aggregator_spec = patch_specs(run_config, inputs)
    theta1, theta2 = backbone_program(backbone_spec), aggregator_program(aggregator_spec)
    replay = _Replay()
    count = _resident(replay, [theta1, theta2])

    c, ph, pw = inputs.channels, grid.ph, grid.pw
    k = run_config.patches_per_iteration
    channels = backbone_spec.output_channels
    replay.add(Category.DATA, element_bytes((batch, c, grid.M, grid.N))
               + element_bytes(_target_shape(run_config.task, batch, grid.M, grid.N)))
    replay.end_phase("data")
    if run_config.task == CLASSIFICATION:
        z_shape = (channels, grid.m, grid.n)
    else:
        z_shape = (channels, grid.M, grid.N)
    replay.add(Category.Z_CACHE, batch * element_bytes(z_shape))
    replay.end_phase("z_init")

    if run_config.use_global_patch:
        replay.add(Category.DATA, element_bytes((batch, c, ph, pw)))
        replay.end_phase("data")

    replay.add(Category.DATA, element_bytes((batch * k, c, ph, pw)))
    theta1_bytes = trace_bytes(trace(theta1, (batch * k, c, ph, pw)))
    replay.add(Category.ACTIVATIONS, theta1_bytes)
    if run_config.use_global_patch:
        global_trace = trace(theta1, (batch, c, ph, pw))
        replay.add(Category.ACTIVATIONS, trace_bytes(global_trace))
    replay.end_phase("patch")

    stacked = (batch,) + z_shape
    fusion = _fusion_trace(run_config, stacked)
    fused = fusion[-1][1] if fusion else stacked
    theta2_trace = trace(theta2, fused)
    aggregate = [("stack_zblocks", stacked)] + fusion + theta2_trace
    aggregate += _loss_trace(run_config.task, theta2_trace[-1][1])
    replay.add(Category.ACTIVATIONS, trace_bytes(aggregate))
    replay.end_phase("aggregate")

    estimate = ConfigEstimate(mode="patch", batch_size=batch, parameter_count=count,
                              categories=dict(replay.current), phases=replay.phases,
                              theta1_activation_bytes=theta1_bytes)
    replay.add(Category.ACTIVATIONS, -replay.current[Category.ACTIVATIONS])
    replay.end_phase("backward")
    replay.end_phase("optimizer")
    return estimate

def _estimate_downsampled(run_config: RunConfig, inputs: InputSpec, batch: int) -> ConfigEstimate:
    factor, backbone_spec, head = downsampled_specs(run_config, inputs)
    theta1 = backbone_program(backbone_spec)
    replay = _Replay()
    count = _resident(replay, [theta1, head])

    height, width = backbone_spec.patch_size
    replay.add(Category.DATA, element_bytes((batch, inputs.channels, height, width))
               + element_bytes(_target_shape(run_config.task, batch, height, width)))
    replay.end_phase("data")

    theta1_trace = trace(theta1, (batch, inputs.channels, height, width))
    head_trace = trace(head, theta1_trace[-1][1])
    theta1_bytes = trace_bytes(theta1_trace)
    replay.add(Category.ACTIVATIONS, theta1_bytes + trace_bytes(head_trace)
               + trace_bytes(_loss_trace(run_config.task, head_trace[-1][1])))
    replay.end_phase("forward")

    estimate = ConfigEstimate(mode="downsampled", batch_size=batch, parameter_count=count,
                              categories=dict(replay.current), phases=replay.phases,
                              theta1_activation_bytes=theta1_bytes)
    replay.add(Category.ACTIVATIONS, -replay.current[Category.ACTIVATIONS])
    replay.end_phase("backward")
    replay.end_phase("optimizer")
    return estimate

def estimate_peak(run_config: RunConfig, inputs: InputSpec, batch_size: Optional[int] = None) -> ConfigEstimate:
    """
    Predicted ledger peak of one outer step of run_config on inputs.

    Args:
        run_config: validated run configuration
        inputs: image size, channels and class count of the data
        batch_size: images per outer step (run_config.batch_size when omitted)

    Raises:
        ConfigError: grid or downsampling factor does not fit the image
        ModelBuildError: the networks cannot be built for this patch size
    """
    batch = run_config.batch_size if batch_size is None else int(batch_size)
    if run_config.mode == "downsampled":
        estimate = _estimate_downsampled(run_config, inputs, batch)
    else:
        estimate = _estimate_patch(run_config, inputs, batch)
    logger.debug(f"Estimated {estimate.mode} peak {estimate.peak_bytes} B for batch {batch}")
    return estimate

# ============================================================================
# Full image vs patch mode
# ============================================================================

@dataclass(frozen=True)
class ModeComparison:
    full_image_peak: int
    patch_mode_peak: int
    full_image_theta1: int
    patch_mode_theta1: int

    @property
    def ratio(self) -> float:
        """Patch-mode peak as a fraction of the full-image peak."""
        return self.patch_mode_peak / self.full_image_peak

    def render(self) -> str:
        rows = [("", "full_image", "patch_mode"),
                ("peak", str(self.full_image_peak), str(self.patch_mode_peak)),
                ("theta1 activations", str(self.full_image_theta1), str(self.patch_mode_theta1))]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = [f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}" for r in rows]
        lines.append(f"ratio (patch / full) {self.ratio:.4f}")
        return "\n".join(lines) + "\n"

def full_image_config(run_config: RunConfig) -> RunConfig:
    """The same networks with the whole image as a single patch and no global patch."""
    return replace(run_config, mode="patch", grid_m=1, grid_n=1, sampling_rate=1.0,
                   inner_iterations=1, use_global_patch=False)

def compare_modes(run_config: RunConfig, inputs: InputSpec, batch_size: int = 1) -> ModeComparison:
    """Peak of training on the whole image vs the configured patch mode, same backbone."""
    full = estimate_peak(full_image_config(run_config), inputs, batch_size)
    patch = estimate_peak(replace(run_config, mode="patch"), inputs, batch_size)
    return ModeComparison(full_image_peak=full.peak_bytes, patch_mode_peak=patch.peak_bytes,
                          full_image_theta1=full.theta1_activation_bytes,
                          patch_mode_theta1=patch.theta1_activation_bytes)

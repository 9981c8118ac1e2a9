"""
Error Manager for the PatchGrad training engine.

Provides the exception hierarchy raised by every module, centralized error
reporting with message templates, and the stable CLI exit-code contract.
"""

import time
from enum import Enum, IntEnum
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional
from utils.logger import setup_logger

logger = setup_logger(__name__)

class ErrorSeverity(Enum):
    """Error severity levels."""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"

class ErrorCategory(Enum):
    """Error categories for better organization."""
    TENSOR = "tensor"
    MODEL = "model"
    PATCH = "patch"
    TRAINING = "training"
    MEMORY = "memory"
    DATA = "data"
    METRICS = "metrics"
    CONFIG = "config"
    SYSTEM = "system"

class ExitCode(IntEnum):
    """Process exit codes; stable contract of the command-line surface."""
    SUCCESS = 0
    CHECK_FAILED = 1
    USAGE = 2
    BUDGET = 3

# ============================================================================
# Exception Hierarchy
# ============================================================================

class PatchGradError(Exception):
    """Base class for every error raised by the engine."""
    category: ErrorCategory = ErrorCategory.SYSTEM
    error_type: str = "internal"
    exit_code: ExitCode = ExitCode.USAGE

class DimensionError(PatchGradError, ValueError):
    """Operand shapes are incompatible with an operation."""
    category = ErrorCategory.TENSOR
    error_type = "dimension_mismatch"

class ContractError(PatchGradError, ValueError):
    """A caller violated an operation's precondition."""
    category = ErrorCategory.TENSOR
    error_type = "contract_violation"

class ModelBuildError(PatchGradError, ValueError):
    """A network spec cannot be turned into a model."""
    category = ErrorCategory.MODEL
    error_type = "build_failed"

class PlanError(PatchGradError, ValueError):
    """Patch sampling plan is inconsistent with the grid."""
    category = ErrorCategory.PATCH
    error_type = "plan_invalid"

class PatchIndexError(PatchGradError, IndexError):
    """A patch index lies outside the grid."""
    category = ErrorCategory.PATCH
    error_type = "index_out_of_range"

class NonFiniteGradientError(PatchGradError, FloatingPointError):
    """A parameter gradient contains NaN or infinity."""
    category = ErrorCategory.TRAINING
    error_type = "non_finite_gradient"

    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient in parameter '{parameter}'")
        self.parameter = parameter

class AccountingError(PatchGradError, RuntimeError):
    """A ledger category would go negative."""
    category = ErrorCategory.MEMORY
    error_type = "accounting_bug"

class BudgetExceededError(PatchGradError, MemoryError):
    """Recording an allocation would push the ledger above its budget."""
    category = ErrorCategory.MEMORY
    error_type = "budget_exceeded"
    exit_code = ExitCode.BUDGET

    def __init__(self, category: str, phase: str, event_index: int,
                 attempted_total: int, budget: int):
        super().__init__(
            f"memory budget {budget} B exceeded: {category} allocation in phase "
            f"'{phase}' would raise the total to {attempted_total} B (event {event_index})"
        )
        self.ledger_category = category
        self.phase = phase
        self.event_index = event_index
        self.attempted_total = attempted_total
        self.budget = budget

class TensorFormatError(PatchGradError, ValueError):
    """A serialized tensor blob is malformed."""
    category = ErrorCategory.DATA
    error_type = "tensor_format"

class DatasetFormatError(PatchGradError, ValueError):
    """A dataset or checkpoint directory has an unreadable manifest or version."""
    category = ErrorCategory.DATA
    error_type = "dataset_format"

class DatasetConsistencyError(DatasetFormatError):
    """Manifest and files on disk disagree."""
    error_type = "dataset_consistency"

class ConfigError(PatchGradError, ValueError):
    """One or more run-config fields are invalid."""
    category = ErrorCategory.CONFIG
    error_type = "config_invalid"

    def __init__(self, violations: List[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(violations))
        self.violations = list(violations)

# ============================================================================
# Error Reports
# ============================================================================

@dataclass
class ErrorReport:
    """Represents an error report with context and metadata."""
    id: str
    category: ErrorCategory
    severity: ErrorSeverity
    title: str
    message: str
    details: Optional[str] = None
    timestamp: float = None
    component: Optional[str] = None
    user_action: Optional[str] = None  # Suggested user action
    context: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp is None:
            self.timestamp = time.time()

class ErrorManager:
    """
    Centralized error management system.

    Features:
    - Error categorization and severity levels
    - User-facing messages from templates
    - Per-invocation summaries of active errors
    """

    def __init__(self):
        self.errors: Dict[str, ErrorReport] = {}
        self.error_counter = 0

        # Error message templates
        self.error_templates = {
            (ErrorCategory.TENSOR, 'dimension_mismatch'): {
                'title': 'Shape Mismatch',
                'message': 'Operand shapes are incompatible.',
                'user_action': 'Check grid, patch size and channel settings.'
            },
            (ErrorCategory.TENSOR, 'contract_violation'): {
                'title': 'Invalid Operation Input',
                'message': 'An operation received values outside its contract.',
                'user_action': 'Check labels, targets and loss inputs.'
            },
            (ErrorCategory.MODEL, 'build_failed'): {
                'title': 'Model Build Failed',
                'message': 'The network description cannot be built.',
                'user_action': 'Patch size must be divisible by the pooling factor.'
            },
            (ErrorCategory.PATCH, 'plan_invalid'): {
                'title': 'Invalid Patch Plan',
                'message': 'Sampling rate and inner iterations exceed the grid.',
                'user_action': 'Lower sampling_rate or inner_iterations.'
            },
            (ErrorCategory.PATCH, 'index_out_of_range'): {
                'title': 'Patch Index Out of Range',
                'message': 'A patch index lies outside the grid.',
                'user_action': 'Report this as a bug.'
            },
            (ErrorCategory.TRAINING, 'non_finite_gradient'): {
                'title': 'Training Diverged',
                'message': 'A gradient became NaN or infinite.',
                'user_action': 'Lower base_lr or check the input data.'
            },
            (ErrorCategory.MEMORY, 'budget_exceeded'): {
                'title': 'Memory Budget Exceeded',
                'message': 'Training stopped before exceeding the memory budget.',
                'user_action': 'Raise memory_budget_bytes or lower sampling_rate.'
            },
            (ErrorCategory.MEMORY, 'accounting_bug'): {
                'title': 'Memory Ledger Inconsistent',
                'message': 'A ledger category would become negative.',
                'user_action': 'Report this as a bug.'
            },
            (ErrorCategory.DATA, 'tensor_format'): {
                'title': 'Corrupt Tensor File',
                'message': 'A tensor blob could not be decoded.',
                'user_action': 'Regenerate the dataset or checkpoint.'
            },
            (ErrorCategory.DATA, 'dataset_format'): {
                'title': 'Unreadable Dataset',
                'message': 'The dataset manifest is missing or has the wrong version.',
                'user_action': 'Regenerate the dataset with gen-data.'
            },
            (ErrorCategory.DATA, 'dataset_consistency'): {
                'title': 'Dataset Incomplete',
                'message': 'The manifest does not match the files on disk.',
                'user_action': 'Regenerate the dataset with gen-data.'
            },
            (ErrorCategory.CONFIG, 'config_invalid'): {
                'title': 'Invalid Configuration',
                'message': 'The run configuration failed validation.',
                'user_action': 'Fix every field listed in the details.'
            },
            (ErrorCategory.SYSTEM, 'io_error'): {
                'title': 'File System Error',
                'message': 'A file or directory could not be read or written.',
                'user_action': 'Check that the path exists and is writable.'
            },
        }

        logger.debug("ErrorManager initialized")

    def report_error(self, category: ErrorCategory, error_type: str,
                     severity: ErrorSeverity = ErrorSeverity.ERROR,
                     component: Optional[str] = None,
                     details: Optional[str] = None,
                     context: Optional[Dict[str, Any]] = None) -> str:
        """
        Report an error with automatic message generation.

        Args:
            category: Error category
            error_type: Specific error type
            severity: Error severity level
            component: Component that generated the error
            details: Additional error details
            context: Additional context information

        Returns:
            Error ID for tracking
        """
        self.error_counter += 1
        error_id = f"err_{self.error_counter}"

        template = self.error_templates.get((category, error_type), {
            'title': f'{category.value.title()} Error',
            'message': f'An error occurred in {component or "the engine"}.',
            'user_action': 'Re-run with --verbose for details.'
        })

        error_report = ErrorReport(
            id=error_id,
            category=category,
            severity=severity,
            title=template['title'],
            message=template['message'],
            details=details,
            component=component,
            user_action=template['user_action'],
            context=context or {}
        )

        self.errors[error_id] = error_report

        log_level = {
            ErrorSeverity.INFO: logger.info,
            ErrorSeverity.WARNING: logger.warning,
            ErrorSeverity.ERROR: logger.error,
            ErrorSeverity.CRITICAL: logger.critical
        }[severity]

        log_level(f"Error reported [{error_id}]: {error_report.title} - {error_report.message}")
        if details:
            log_level(f"Error details [{error_id}]: {details}")
        if error_report.user_action:
            log_level(f"Suggested action [{error_id}]: {error_report.user_action}")

        return error_id

    def report_exception(self, exc: PatchGradError, component: Optional[str] = None) -> str:
        """Report a raised engine exception using its category and type."""
        return self.report_error(exc.category, exc.error_type, component=component,
                                 details=str(exc))

    def get_active_errors(self) -> List[ErrorReport]:
        """Get list of currently active errors."""
        return list(self.errors.values())

    def clear_errors(self):
        """Forget every active error."""
        self.errors.clear()

    def get_error_summary(self) -> Dict[str, Any]:
        """Get summary of errors by category and severity."""
        summary = {
            'total': len(self.errors),
            'by_category': {},
            'by_severity': {}
        }
        for error in self.get_active_errors():
            cat = error.category.value
            summary['by_category'][cat] = summary['by_category'].get(cat, 0) + 1
            sev = error.severity.value
            summary['by_severity'][sev] = summary['by_severity'].get(sev, 0) + 1
        return summary

# Global error manager instance
error_manager = ErrorManager()

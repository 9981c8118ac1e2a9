"""Tests for exit codes and centralized error reporting."""

import pytest

from utils.error_manager import (BudgetExceededError, ConfigError, DatasetConsistencyError, DatasetFormatError,
                                 ErrorCategory, ErrorManager, ErrorSeverity, ExitCode, PatchIndexError, PlanError)

@pytest.fixture
def manager():
    return ErrorManager()

class TestExceptions:

    def test_exit_codes(self):
        assert ConfigError(["x: bad"]).exit_code == ExitCode.USAGE
        assert BudgetExceededError("data", "setup", 0, 10, 0).exit_code == ExitCode.BUDGET
        assert [int(code) for code in ExitCode] == [0, 1, 2, 3]

    def test_builtin_bases(self):
        assert issubclass(PatchIndexError, IndexError)
        assert issubclass(PlanError, ValueError)
        assert issubclass(DatasetConsistencyError, DatasetFormatError)

    def test_budget_error_fields(self):
        err = BudgetExceededError("activations", "aggregate", 41, 2048, 2000)
        assert (err.ledger_category, err.phase, err.event_index) == ("activations", "aggregate", 41)
        assert "aggregate" in str(err) and "2048" in str(err)

    def test_config_error_lists_violations(self):
        err = ConfigError(["grid_m: must be >= 1", "fusion: unknown 'max'"])
        assert err.violations == ["grid_m: must be >= 1", "fusion: unknown 'max'"]
        assert "fusion" in str(err)

class TestErrorManager:

    def test_report_exception_uses_template(self, manager):
        error_id = manager.report_exception(ConfigError(["grid_m: must be >= 1"]), component="train")
        report = manager.get_active_errors()[0]
        assert report.id == error_id
        assert report.title == "Invalid Configuration"
        assert report.component == "train"
        assert "grid_m" in report.details

    def test_unknown_type_falls_back(self, manager):
        manager.report_error(ErrorCategory.METRICS, "odd", component="eval")
        assert manager.get_active_errors()[0].title == "Metrics Error"

    def test_summary(self, manager):
        manager.report_error(ErrorCategory.DATA, "tensor_format")
        manager.report_error(ErrorCategory.DATA, "dataset_format", severity=ErrorSeverity.WARNING)
        manager.report_error(ErrorCategory.MEMORY, "budget_exceeded")
        summary = manager.get_error_summary()
        assert summary["total"] == 3
        assert summary["by_category"] == {"data": 2, "memory": 1}
        assert summary["by_severity"] == {"error": 2, "warning": 1}

    def test_clear(self, manager):
        manager.report_error(ErrorCategory.DATA, "tensor_format")
        manager.report_error(ErrorCategory.MEMORY, "budget_exceeded")
        manager.clear_errors()
        assert manager.get_active_errors() == []
        assert manager.get_error_summary() == {"total": 0, "by_category": {}, "by_severity": {}}

    def test_ids_keep_increasing_after_clear(self, manager):
        first = manager.report_error(ErrorCategory.SYSTEM, "io_error")
        manager.clear_errors()
        second = manager.report_error(ErrorCategory.SYSTEM, "io_error")
        assert first != second
        assert [e.id for e in manager.get_active_errors()] == [second]

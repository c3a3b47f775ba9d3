"""Unit tests for the structured logging setup."""

import json

import pytest

from finslercap.core.logging_config import get_logger, setup_logging


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    setup_logging(log_level="WARNING", use_json=False, deterministic=True)


def test_unknown_level():
    """Level names are validated."""
    with pytest.raises(ValueError, match="Unknown log level"):
        setup_logging(log_level="LOUD")


def test_json_lines_on_stderr(capsys):
    """JSON records go to stderr with level and logger name, stdout stays clean."""
    setup_logging(log_level="INFO", use_json=True)
    get_logger("finslercap.tests.json").info("ncg_converged", iterations=12, message="done")

    captured = capsys.readouterr()
    assert captured.out == ""
    record = json.loads(captured.err.strip().splitlines()[-1])
    assert record["event"] == "ncg_converged"
    assert record["iterations"] == 12
    assert record["level"] == "INFO"
    assert record["logger"] == "finslercap.tests.json"
    assert "timestamp" in record


def test_deterministic_omits_timestamp(capsys):
    """Deterministic runs log without timestamps."""
    setup_logging(log_level="INFO", use_json=True, deterministic=True)
    get_logger("finslercap.tests.deterministic").warning("cache_cold")

    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "timestamp" not in record
    assert record["level"] == "WARNING"


def test_level_filters(capsys):
    """Records below the configured level are dropped."""
    setup_logging(log_level="ERROR", use_json=True, deterministic=True)
    get_logger("finslercap.tests.filtered").info("ignored")
    assert capsys.readouterr().err == ""

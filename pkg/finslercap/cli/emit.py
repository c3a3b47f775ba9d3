"""Report and plot-data emission: one JSON envelope plus optional CSV tables."""

from __future__ import annotations

import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from finslercap.core.config import settings
from finslercap.core.logging_config import get_logger
from finslercap.schemas import Envelope

logger = get_logger(__name__)

FLUX_COLUMNS = ("theta_index", "x", "y", "z", "H_Du")
PROFILE_COLUMNS = ("direction", "H0", "u", "u_closed_form")


def _default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def envelope(command: str, results: Any, deterministic: bool = False) -> Envelope:
    generated_at = None
    if not deterministic:
        generated_at = datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")
    return Envelope(command=command, version=settings.APP_VERSION, generated_at=generated_at, results=results)


def render(doc: Envelope) -> str:
    """Canonical JSON text: sorted keys, no timestamp when it was omitted."""
    payload = doc.model_dump(mode="python")
    if payload.get("generated_at") is None:
        payload.pop("generated_at", None)
    return json.dumps(payload, sort_keys=True, indent=2, default=_default, allow_nan=True) + "\n"


def write_report(doc: Envelope, out: str | Path | None = None) -> str:
    text = render(doc)
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info("report_written", path=str(path), command=doc.command, message="Report written")
    return text


def write_csv(rows: Iterable[dict], columns: tuple[str, ...], path: str | Path) -> Path:
    """CSV with a fixed header; missing columns are left empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        count = 0
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
            count += 1
    logger.info("csv_written", path=str(path), rows=count, message="CSV table written")
    return path


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value

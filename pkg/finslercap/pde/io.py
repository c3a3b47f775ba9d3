"""Binary field files.

Layout: the 8-byte magic `FCAPFLD1`, the header length as a little-endian
uint64, the UTF-8 JSON header, then the nodal values as little-endian float64
with x varying fastest. A sidecar `<name>.json` carries a short summary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from finslercap.core.errors import InvalidArgumentError
from finslercap.core.logging_config import get_logger
from finslercap.pde.domain import ScalarField, VoxelDomain

logger = get_logger(__name__)

MAGIC = b"FCAPFLD1"


class FieldHeader(BaseModel):
    """JSON header of a field file."""

    dims: list[int]
    spacing: float
    origin: list[float]
    order: str = "x-fastest"
    dtype: str = "<f8"
    kind: str = "field"
    metadata: dict[str, Any] = Field(default_factory=dict)


@dataclass
class FieldRecord:
    header: FieldHeader
    values: np.ndarray

    def to_field(self, domain: VoxelDomain) -> ScalarField:
        """Attach the values to a domain with the same grid."""
        if tuple(domain.shape) != tuple(self.header.dims) or not np.isclose(domain.spacing, self.header.spacing):
            raise InvalidArgumentError("field file grid does not match the domain")
        return ScalarField(domain, self.values, kind=self.header.kind, metadata=dict(self.header.metadata))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_field(field_: ScalarField, path: str | Path) -> Path:
    """Write the field and its sidecar summary; returns the field path."""
    path = Path(path)
    domain = field_.domain
    header = FieldHeader(
        dims=list(domain.shape),
        spacing=domain.spacing,
        origin=domain.lo.tolist(),
        kind=field_.kind,
        metadata=_jsonable(field_.metadata),
    )
    header_bytes = header.model_dump_json().encode("utf-8")
    payload = np.ascontiguousarray(field_.values.ravel(order="F"), dtype="<f8").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)

    finite = field_.values[np.isfinite(field_.values)]
    summary = {
        "file": path.name,
        "dims": header.dims,
        "spacing": header.spacing,
        "origin": header.origin,
        "kind": header.kind,
        "min": float(finite.min()) if finite.size else None,
        "max": float(finite.max()) if finite.size else None,
        "mean": float(finite.mean()) if finite.size else None,
        "domain": domain.summary(),
    }
    path.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    logger.info("field_written", path=str(path), kind=field_.kind, dims=header.dims, message="Field file written")
    return path


def read_field(path: str | Path) -> FieldRecord:
    """Read a field file written by `write_field`.

    Raises:
        InvalidArgumentError: bad magic, truncated file or malformed header.
    """
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise InvalidArgumentError(f"{path}: not a field file")
    offset = len(MAGIC)
    if len(data) < offset + 8:
        raise InvalidArgumentError(f"{path}: truncated header")
    (length,) = struct.unpack("<Q", data[offset:offset + 8])
    offset += 8
    try:
        header = FieldHeader.model_validate_json(data[offset:offset + length])
    except ValidationError as exc:
        raise InvalidArgumentError(f"{path}: malformed header: {exc}") from exc
    offset += length
    count = int(np.prod(header.dims))
    if len(data) - offset != 8 * count:
        raise InvalidArgumentError(f"{path}: expected {count} values, found {(len(data) - offset) // 8}")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    values = flat.reshape(header.dims, order="F").astype(float)
    return FieldRecord(header=header, values=values)

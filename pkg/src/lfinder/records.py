"""Config and result records: human-readable JSON with exact decimal floats.

JSON number literals are decimal text; Python emits the shortest decimal that
round-trips the binary64 value exactly (<= 17 significant digits), so
serialize->parse is the identity on finite floats.  NaN/Inf are rejected.
Complex values are stored as [re, im] pairs.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__

__all__ = ["RunConfig", "ResultRecord", "to_jsonable", "config_hash", "truncate_decimals"]


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays, complex, tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, complex):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, float) and not np.isfinite(obj):
        raise ValueError("non-finite floats are not serializable in records")
    return obj


def _dump(tree: Any) -> str:
    return json.dumps(to_jsonable(tree), indent=2, sort_keys=True, allow_nan=False)


def config_hash(tree: Any) -> str:
    return hashlib.sha256(
        json.dumps(to_jsonable(tree), sort_keys=True, allow_nan=False).encode()
    ).hexdigest()[:16]


@dataclass
class RunConfig:
    """A command plus its option tree; round-trips through JSON exactly."""

    command: str
    options: dict[str, Any]

    def serialize(self) -> str:
        return _dump({"command": self.command, "options": self.options})

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        tree = json.loads(text)
        return cls(command=tree["command"], options=tree["options"])

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def hash(self) -> str:
        return config_hash({"command": self.command, "options": self.options})


@dataclass
class ResultRecord:
    """kind + payload + provenance; every numeric payload block carries its
    estimated accuracy in `precision`."""

    kind: str  # coefficients | candidate | exclusion | verification
    payload: dict[str, Any]
    precision: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def build(cls, kind: str, payload: dict, precision: dict, config: RunConfig) -> "ResultRecord":
        if not precision:
            raise ValueError("records must carry accuracy metadata")
        return cls(
            kind=kind,
            payload=payload,
            precision=precision,
            provenance={
                "config_hash": config.hash(),
                "code_version": __version__,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            },
        )

    def serialize(self) -> str:
        return _dump(
            {
                "kind": self.kind,
                "payload": self.payload,
                "precision": self.precision,
                "provenance": self.provenance,
            }
        )

    @classmethod
    def parse(cls, text: str) -> "ResultRecord":
        tree = json.loads(text)
        return cls(
            kind=tree["kind"],
            payload=tree["payload"],
            precision=tree["precision"],
            provenance=tree["provenance"],
        )


def truncate_decimals(x: float, places: int = 8) -> str:
    """Truncate (toward zero) to a fixed number of decimals, for table display."""
    scale = 10**places
    v = int(x * scale) / scale  # int() truncates toward zero
    return f"{v:.{places}f}"

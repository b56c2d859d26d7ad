"""A small container for fit diagnostics, serializable to stable JSON."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def to_jsonable(obj):
    """Convert numpy scalars/arrays, complex numbers and tuples to plain JSON types.

    Non-finite floats become strings so the output is strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": to_jsonable(float(obj.real)), "im": to_jsonable(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    """Byte-stable JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@dataclass
class FitReport:
    """Residuals, conditioning and fitted unknowns of one fit or check."""

    kind: str
    residuals: dict = field(default_factory=dict)
    condition: float | None = None
    fitted: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self):
        return to_jsonable(
            {
                "kind": self.kind,
                "residuals": self.residuals,
                "condition": self.condition,
                "fitted": self.fitted,
                "notes": self.notes,
            }
        )

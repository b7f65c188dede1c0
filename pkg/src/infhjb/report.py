"""Structured pass/fail results and deterministic JSON serialisation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


def jsonable(obj):
    """Convert numpy types and non-finite floats into plain JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one numerical test.

    ``worst_margin`` is the smallest slack seen (negative means violated) and
    ``witness`` locates it. ``budget`` decomposes the tolerance that was applied.
    """

    test: str
    passed: bool
    worst_margin: float
    point: Optional[Any] = None
    candidate: Optional[Any] = None
    witness: Optional[Any] = None
    stability: Optional[Any] = None
    budget: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def verdict(self):
        return "PASS" if self.passed else "FAIL"

    def to_dict(self):
        return {
            "test": self.test,
            "verdict": self.verdict,
            "worst_margin": self.worst_margin,
            "point": self.point,
            "candidate": self.candidate,
            "witness": self.witness,
            "stability": self.stability,
            "budget": self.budget,
            "details": self.details,
        }

    def to_json(self):
        return dumps(self.to_dict())

    def __bool__(self):
        return self.passed

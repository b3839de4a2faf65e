"""LACE index and Charlson comorbidity index comparators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import DataError

# (superseding condition, superseded condition): only the former is counted
HIERARCHY = (
    ("metastatic_cancer", "cancer"),
    ("severe_liver_disease", "mild_liver_disease"),
    ("diabetes_with_complications", "diabetes"),
)


@dataclass(frozen=True)
class LaceInput:
    inpatient_los_days: int
    acute_admission: bool
    cci: int
    ed_visits_6m: int


def los_points(days: float) -> int:
    if days < 1:
        return 0
    if days < 4:
        return int(days)
    if days < 7:
        return 4
    if days < 14:
        return 5
    return 7


def cci_points(cci: int) -> int:
    return 5 if cci >= 4 else int(cci)


def lace_score(inp: LaceInput) -> int:
    """LACE total (0-19): length of stay, acuity, comorbidity and ED-visit points."""
    if inp.inpatient_los_days < 0 or inp.cci < 0 or inp.ed_visits_6m < 0:
        raise DataError(f"LACE inputs must be non-negative: {inp}")
    return (
        los_points(inp.inpatient_los_days)
        + (3 if inp.acute_admission else 0)
        + cci_points(inp.cci)
        + min(int(inp.ed_visits_6m), 4)
    )


def load_weights(path: str | Path | None = None) -> dict[str, int]:
    """Read a (flag_name, weight) table; defaults to the bundled 1987 Charlson weights."""
    if path is None:
        text = resources.files("vicscore").joinpath("data/charlson_weights.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rows = list(csv.DictReader(text.splitlines()))
    try:
        weights = {r["flag_name"].strip(): int(r["weight"]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed Charlson weight map: {exc}") from None
    if any(w < 0 for w in weights.values()):
        raise DataError("Charlson weights must be non-negative")
    return weights


DEFAULT_WEIGHTS = load_weights()


def cci(flags: Mapping[str, bool | int], weights: Mapping[str, int] | None = None) -> int:
    weights = DEFAULT_WEIGHTS if weights is None else weights
    unknown = set(flags) - set(weights)
    if unknown:
        raise DataError(f"comorbidity flags not in the weight map: {sorted(unknown)}")
    for k, v in flags.items():
        if int(v) not in (0, 1):
            raise DataError(f"comorbidity flag {k!r} must be 0/1, got {v!r}")
    on = {k for k, v in flags.items() if v}
    for top, sub in HIERARCHY:
        if top in on:
            on.discard(sub)
    return sum(weights[k] for k in on)

"""Seeded synthetic cohorts with a known logistic ground truth."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import DataError
from .tabular import CATEGORICAL, CONTINUOUS, Cohort, VariableSchema, write_cohort, write_schema


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = CONTINUOUS
    mean: float = 0.0
    sd: float = 1.0
    categories: tuple[str, ...] = ()
    probabilities: tuple[float, ...] = ()
    # one beta for a continuous variable, len(categories) - 1 for a categorical one
    betas: tuple[float, ...] = ()
    missing_rate: float = 0.0
    unit: str | None = None


@dataclass(frozen=True)
class CollinearPair:
    source: str
    copy: str
    noise_sd: float


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    variables: tuple[VariableSpec, ...]
    intercept: float = 0.0
    collinear_pairs: tuple[CollinearPair, ...] = ()
    seed: int = 0
    outcome_name: str = "outcome"

    def __post_init__(self):
        if self.n < 1:
            raise DataError("n must be positive")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names in generator spec")
        for v in self.variables:
            if not 0 <= v.missing_rate < 1:
                raise DataError(f"{v.name}: missing_rate must be in [0, 1)")
            if v.kind == CATEGORICAL:
                if len(v.probabilities) != len(v.categories) or len(v.categories) < 2:
                    raise DataError(f"{v.name}: need one probability per category (>= 2 categories)")
                if abs(sum(v.probabilities) - 1) > 1e-9 or min(v.probabilities) < 0:
                    raise DataError(f"{v.name}: probabilities must be non-negative and sum to 1")
                if v.betas and len(v.betas) != len(v.categories) - 1:
                    raise DataError(f"{v.name}: need {len(v.categories) - 1} betas")
                if v.missing_rate:
                    raise DataError(f"{v.name}: missingness is only supported for continuous variables")
            elif v.kind == CONTINUOUS:
                if v.betas and len(v.betas) != 1:
                    raise DataError(f"{v.name}: continuous variables take one beta")
                if v.sd < 0:
                    raise DataError(f"{v.name}: sd must be >= 0")
            else:
                raise DataError(f"{v.name}: unknown kind {v.kind!r}")
        by_name = {v.name: v for v in self.variables}
        for p in self.collinear_pairs:
            for name in (p.source, p.copy):
                if name not in by_name or by_name[name].kind != CONTINUOUS:
                    raise DataError(f"collinear pair member {name!r} must be a declared continuous variable")

    @property
    def signal(self) -> list[str]:
        return [v.name for v in self.variables if any(b != 0 for b in v.betas)]

    @property
    def noise(self) -> list[str]:
        return [v.name for v in self.variables if not any(b != 0 for b in v.betas)]


def generate(spec: GeneratorSpec) -> Cohort:
    """Draw predictors, collinear copies, outcomes and missingness, all from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    values: dict[str, np.ndarray] = {}
    eta = np.full(n, float(spec.intercept))
    copies = {p.copy: p for p in spec.collinear_pairs}
    for v in spec.variables:
        if v.name in copies:
            continue
        if v.kind == CONTINUOUS:
            values[v.name] = rng.normal(v.mean, v.sd, n)
        else:
            p = np.asarray(v.probabilities)
            if v.betas and np.max(p) == 1.0 and any(b != 0 for b in v.betas):
                warnings.warn(f"{v.name}: all mass on one category yet betas are non-zero", stacklevel=2)
            values[v.name] = rng.choice(len(v.categories), size=n, p=p)
    for v in spec.variables:
        if v.name in copies:
            pair = copies[v.name]
            values[v.name] = values[pair.source] + rng.normal(0.0, pair.noise_sd, n)
    for v in spec.variables:
        if not v.betas:
            continue
        if v.kind == CONTINUOUS:
            eta += v.betas[0] * values[v.name]
        else:
            eta += np.concatenate([[0.0], v.betas])[values[v.name]]
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(np.int64)
    for v in spec.variables:
        if v.kind == CONTINUOUS and v.missing_rate > 0:
            col = values[v.name].copy()
            col[rng.random(n) < v.missing_rate] = np.nan
            values[v.name] = col
    schema = tuple(
        VariableSchema(v.name, v.kind, tuple(v.categories) if v.kind == CATEGORICAL else (), v.unit)
        for v in spec.variables
    )
    return Cohort(schema, values, y, spec.outcome_name)


def default_spec(n: int = 20000, seed: int = 2022) -> GeneratorSpec:
    """20 candidates: 6 signal (3 continuous, 3 categorical) and 14 noise.

    ``x12`` is a near-copy of the signal ``x03`` (noise_sd 0.01) and carries no
    coefficient of its own; ``x02`` and ``x05`` have 5% missing values.
    """
    c = CONTINUOUS
    k = CATEGORICAL
    v = [
        VariableSpec("x01", c, 60.0, 15.0, betas=(0.05,), unit="years"),
        VariableSpec("x02", c, 140.0, 5.0, betas=(-0.12,), missing_rate=0.05),
        VariableSpec("x03", c, 0.0, 1.0, betas=(0.5,)),
        VariableSpec("x04", c, 100.0, 20.0),
        VariableSpec("x05", c, 5.0, 2.0, missing_rate=0.05),
        VariableSpec("x06", c, 0.0, 1.0),
        VariableSpec("x07", c, 37.0, 0.5),
        VariableSpec("x08", c, 80.0, 12.0),
        VariableSpec("x09", c, 1.0, 0.3),
        VariableSpec("x10", c, 25.0, 4.0),
        VariableSpec("x11", c, 12.0, 3.0),
        VariableSpec("x12", c, 0.0, 1.0),
        VariableSpec("c01", k, categories=("A", "B", "C"), probabilities=(0.5, 0.3, 0.2), betas=(0.6, 1.2)),
        VariableSpec("c02", k, categories=("no", "yes"), probabilities=(0.7, 0.3), betas=(0.9,)),
        VariableSpec("c03", k, categories=("P1", "P2", "P3", "P4"), probabilities=(0.4, 0.3, 0.2, 0.1),
                     betas=(0.3, 0.6, 1.0)),
        VariableSpec("c04", k, categories=("no", "yes"), probabilities=(0.8, 0.2)),
        VariableSpec("c05", k, categories=("L", "M", "H"), probabilities=(0.3, 0.4, 0.3)),
        VariableSpec("c06", k, categories=("no", "yes"), probabilities=(0.5, 0.5)),
        VariableSpec("c07", k, categories=("u", "v", "w", "z"), probabilities=(0.25, 0.25, 0.25, 0.25)),
        VariableSpec("c08", k, categories=("no", "yes"), probabilities=(0.9, 0.1)),
    ]
    # centre the continuous signals so prevalence stays near 20%
    intercept = -2.0 - 0.05 * 60.0 + 0.12 * 140.0
    return GeneratorSpec(n, tuple(v), intercept, (CollinearPair("x03", "x12", 0.01),), seed)


# --------------------------------------------------------------------------
# spec files
# --------------------------------------------------------------------------

def spec_to_dict(spec: GeneratorSpec) -> dict:
    d = asdict(spec)
    for v in d["variables"]:
        for key in ("categories", "probabilities", "betas"):
            v[key] = list(v[key])
    d["collinear_pairs"] = [dict(p) for p in d["collinear_pairs"]]
    d["variables"] = list(d["variables"])
    return d


def spec_from_dict(d: dict) -> GeneratorSpec:
    try:
        variables = tuple(
            VariableSpec(
                name=str(v["name"]),
                kind=v.get("kind", CONTINUOUS),
                mean=float(v.get("mean", 0.0)),
                sd=float(v.get("sd", 1.0)),
                categories=tuple(str(c) for c in v.get("categories", ())),
                probabilities=tuple(float(p) for p in v.get("probabilities", ())),
                betas=tuple(float(b) for b in v.get("betas", ())),
                missing_rate=float(v.get("missing_rate", 0.0)),
                unit=v.get("unit"),
            )
            for v in d["variables"]
        )
        pairs = tuple(
            CollinearPair(str(p["source"]), str(p["copy"]), float(p["noise_sd"]))
            for p in d.get("collinear_pairs", ())
        )
        return GeneratorSpec(
            int(d["n"]), variables, float(d.get("intercept", 0.0)), pairs, int(d.get("seed", 0)),
            str(d.get("outcome_name", "outcome")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed generator spec: {exc}") from None


def load_spec(path: str | Path) -> GeneratorSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(yaml.safe_load(fh))


def write_spec(path: str | Path, spec: GeneratorSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec_to_dict(spec), fh, sort_keys=False)


def write_generated(cohort: Cohort, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, schema = out / "data.csv", out / "schema.yaml"
    write_cohort(cohort, data)
    write_schema(schema, cohort.schema, cohort.outcome_name)
    return data, schema

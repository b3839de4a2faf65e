"""End-to-end orchestration: configuration, the rank/build/score/synth commands and artifacts."""

from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import __version__, baseline, glm, pool, rank, rashomon, sage, scorecard, synth, tabular
from .errors import ConfigError, DataError, VicScoreError

log = logging.getLogger(__name__)

RANK_TABLE = "rank_table.csv"
KEPT_FILE = "kept_variables.txt"
DROPPED_FILE = "dropped_variables.txt"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class EnsembleConfig:
    m: int = 350
    epsilon: float = 0.05


@dataclass
class SageSection:
    eval_rows: int = 3500
    background_size: int = 128
    n_permutations: int = 256
    min_permutations: int = 32
    convergence_tol: float = 0.01


@dataclass
class ForestConfig:
    n_trees: int = 100
    mtry: int | None = None
    min_leaf: int = 10


@dataclass
class ScorecardConfig:
    cut_method: str = "quantile"
    kmeans_k: int = 5
    final_m: int | None = None
    min_gain: float = 0.01
    fine_tune: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class LaceMapping:
    """Columns feeding the LACE comparator; ``cci`` or ``comorbidities`` supplies C."""

    los: str | None = None
    ed_visits: str | None = None
    acute: str | bool = True
    cci: str | None = None
    comorbidities: dict[str, str] = field(default_factory=dict)
    weights: str | None = None

    @property
    def mapped(self) -> bool:
        return bool(self.los and self.ed_visits and (self.cci or self.comorbidities))


@dataclass
class PipelineConfig:
    data: str = ""
    schema: str = ""
    delimiter: str = ","
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 42
    impute_source: str = "train"
    method: str = "shapleyvic"
    variables: list[str] | None = None
    alpha: float = 0.05
    gvif_threshold: float = 2.0
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    sage: SageSection = field(default_factory=SageSection)
    forest: ForestConfig = field(default_factory=ForestConfig)
    scorecard: ScorecardConfig = field(default_factory=ScorecardConfig)
    n_boot: int = 1000
    lace: LaceMapping = field(default_factory=LaceMapping)
    out: str = "out"

    def validate(self) -> "PipelineConfig":
        if not self.data or not self.schema:
            raise ConfigError("config must name both 'data' and 'schema' files")
        if len(self.split) != 3 or any(f <= 0 for f in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"split must be three positive fractions summing to 1, got {list(self.split)}")
        if self.impute_source not in tabular.PARTITIONS:
            raise ConfigError(f"impute_source must be one of {tabular.PARTITIONS}")
        if self.method not in ("shapleyvic", "random_forest"):
            raise ConfigError(f"method must be 'shapleyvic' or 'random_forest', got {self.method!r}")
        if not self.ensemble.epsilon > 0:
            raise ConfigError(f"ensemble.epsilon must be > 0, got {self.ensemble.epsilon}")
        if self.ensemble.m < 3:
            raise ConfigError("ensemble.m must be >= 3")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        s = self.sage
        if min(s.eval_rows, s.background_size, s.n_permutations, s.min_permutations) <= 0:
            raise ConfigError("sage sizes must be positive")
        if s.convergence_tol < 0:
            raise ConfigError("sage.convergence_tol must be >= 0")
        if self.forest.n_trees < 1:
            raise ConfigError("forest.n_trees must be >= 1")
        sc = self.scorecard
        if sc.cut_method not in ("quantile", "kmeans"):
            raise ConfigError(f"scorecard.cut_method must be 'quantile' or 'kmeans', got {sc.cut_method!r}")
        if sc.final_m is not None and sc.final_m < 1:
            raise ConfigError("scorecard.final_m must be >= 1")
        if sc.min_gain < 0:
            raise ConfigError("scorecard.min_gain must be >= 0")
        if self.n_boot < 100:
            raise ConfigError("n_boot must be >= 100")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d


def _build(cls, raw: Mapping[str, Any], where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        elif name == "split":
            kwargs[name] = tuple(float(x) for x in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Read a YAML/JSON config; relative data paths resolve against the config's directory."""
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
        base = Path(path).resolve().parent
    cfg = _build(PipelineConfig, raw, "config")
    for key in ("data", "schema"):
        p = getattr(cfg, key)
        if p and not Path(p).is_absolute():
            setattr(cfg, key, str(base / p))
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "final_m":
            cfg.scorecard.final_m = int(value)
        else:
            setattr(cfg, key, value)
    return cfg.validate()


# --------------------------------------------------------------------------
# artifact staging
# --------------------------------------------------------------------------

class Artifacts:
    """Write into a staging directory; publish on success, discard on failure."""

    def __init__(self, out: str | Path, names: Sequence[str], force: bool):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        clash = [n for n in names if (self.out / n).exists()]
        if clash and not force:
            raise ConfigError(f"{self.out}: would overwrite {clash}; pass --force to allow")
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))

    def path(self, name: str) -> Path:
        return self.stage / name

    def publish(self) -> list[Path]:
        done = []
        for p in sorted(self.stage.iterdir()):
            target = self.out / p.name
            os.replace(p, target)
            done.append(target)
        self.stage.rmdir()
        return done

    def discard(self):
        shutil.rmtree(self.stage, ignore_errors=True)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    path.write_text("".join(f"{x}\n" for x in lines), encoding="utf-8")


def _manifest(cfg: PipelineConfig, stage: str, extra: Mapping | None = None) -> dict:
    # thread count and output location are deliberately absent: results do not depend on them
    conf = cfg.to_dict()
    conf.pop("out")
    m = {"stage": stage, "version": __version__, "config": conf}
    if extra:
        m.update(extra)
    return m


class StageError(VicScoreError):
    def __init__(self, stage: str, exc: VicScoreError):
        super().__init__(f"[{stage}] {exc}")
        self.exit_code = exc.exit_code
        self.stage = stage


def _stage(name: str, fn, *args, **kwargs):
    log.info("stage %s", name)
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except VicScoreError as exc:
        raise StageError(name, exc) from exc


# --------------------------------------------------------------------------
# shared preparation
# --------------------------------------------------------------------------

def prepare_cohort(cfg: PipelineConfig) -> tabular.Cohort:
    cohort = _stage("load", tabular.load_cohort, cfg.data, cfg.schema, cfg.delimiter)
    cohort = _stage("split", tabular.split, cohort, cfg.split, cfg.seed)
    return _stage("impute", tabular.impute_median, cohort, cfg.impute_source)


def candidate_variables(cfg: PipelineConfig, cohort: tabular.Cohort) -> list[str]:
    if cfg.variables is None:
        return cohort.names
    for v in cfg.variables:
        cohort.variable(v)
    return list(cfg.variables)


@dataclass
class ShapleyVicResult:
    center: glm.CoefficientVector
    design: tabular.DesignMatrix
    gvif: dict[str, glm.Gvif]
    ensemble: rashomon.ModelEnsemble
    records: list[sage.ImportanceRecord]
    pooled: list[pool.PooledImportance]
    kept: list[str]
    dropped: list[str]
    ranks: rank.RankTable


def run_shapleyvic(cohort: tabular.Cohort, variables: Sequence[str], cfg: PipelineConfig,
                   threads: int = 1) -> ShapleyVicResult:
    """Optimal fit, near-optimal ensemble, SAGE per model, pooling, filtering and ranking."""
    variables = list(variables)
    design, y = _stage("encode", tabular.encode, cohort, "train", variables)
    center = _stage("fit", glm.fit_logistic, design, y)
    vif = _stage("gvif", glm.gvif, design)
    ens = _stage("ensemble", rashomon.sample_ensemble, center, design, y,
                 cfg.ensemble.m, cfg.ensemble.epsilon, cfg.seed)
    s = cfg.sage
    scfg = sage.SageConfig(s.eval_rows, s.background_size, s.n_permutations, cfg.seed,
                           s.min_permutations, s.convergence_tol)
    data = _stage("sage", sage.SageData.from_cohort, cohort, variables, scfg)
    per_model = _stage("sage", sage.sage_ensemble, ens.models, data, scfg, threads)
    gv = {v: g.gvif for v, g in vif.items()}
    per_model = [sage.apply_absolute(rs, gv, cfg.gvif_threshold) for rs in per_model]
    records = [r for rs in per_model for r in rs]
    pooled = _stage("pool", pool.pool_all, records, variables)
    kept, dropped = _stage("filter", pool.filter_significant, pooled)
    # only variables that survive the filter are ranked against each other
    names = [p.variable for p in kept]
    keep = set(names)
    R = np.array([
        rank.rank_within_model([r.value for r in rs if r.variable in keep],
                               [r.se for r in rs if r.variable in keep], cfg.alpha)
        if len(names) > 1 else np.ones(1, dtype=np.int64)
        for rs in per_model
    ])
    table = rank.ensemble_rank(R, names, {p.variable: p.mean for p in pooled})
    return ShapleyVicResult(center, design, vif, ens, records, pooled,
                            [p.variable for p in kept], [p.variable for p in dropped], table)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

SHAPLEYVIC_ARTIFACTS = (
    "manifest_rank.json", "gvif.csv", "ensemble.csv", "importance_records.csv", pool.BAR_FILE,
    pool.VIOLIN_FILE, "pooled_importance.csv", RANK_TABLE, KEPT_FILE, DROPPED_FILE,
)
RF_ARTIFACTS = ("manifest_rank.json", RANK_TABLE)


def cmd_rank(cfg: PipelineConfig, threads: int = 1, force: bool = False) -> dict:
    """Rank candidate variables and write the rank artifacts. Returns a short summary."""
    names = SHAPLEYVIC_ARTIFACTS if cfg.method == "shapleyvic" else RF_ARTIFACTS
    art = Artifacts(cfg.out, names, force)
    try:
        cohort = prepare_cohort(cfg)
        variables = candidate_variables(cfg, cohort)
        summary: dict[str, Any] = {"method": cfg.method, "n_candidates": len(variables)}
        if cfg.method == "random_forest":
            table = _stage("random_forest", rank.rf_rank, cohort, variables, cfg.forest.n_trees,
                           cfg.forest.mtry, cfg.seed, min_leaf=cfg.forest.min_leaf, threads=threads)
            rank.write_rank_table(art.path(RANK_TABLE), table)
        else:
            res = run_shapleyvic(cohort, variables, cfg, threads)
            _write_gvif(art.path("gvif.csv"), res.gvif, cfg.gvif_threshold)
            rashomon.write_ensemble(res.ensemble, art.path("ensemble.csv"), res.design.columns)
            sage.write_records(art.path("importance_records.csv"), res.records)
            losses = {i: m.loss for i, m in enumerate(res.ensemble.models)}
            pool.export_plot_data(res.records, res.pooled, art.stage, losses)
            _write_pooled(art.path("pooled_importance.csv"), res.pooled)
            rank.write_rank_table(art.path(RANK_TABLE), res.ranks)
            _write_lines(art.path(KEPT_FILE), res.ranks.order)
            _write_lines(art.path(DROPPED_FILE), res.dropped)
            summary.update(
                n_excluded=len(res.dropped), kept=len(res.kept),
                acceptance_rate=res.ensemble.acceptance_rate, min_loss=res.center.loss,
            )
            table = res.ranks
        summary["order"] = table.order
        _write_json(art.path("manifest_rank.json"), _manifest(cfg, "rank"))
        art.publish()
    except BaseException:
        art.discard()
        raise
    return summary


def _write_gvif(path, vif, threshold):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "gvif", "df", "gvif_adjusted", "absolute_applied"])
        for v, g in vif.items():
            w.writerow([v, repr(g.gvif), g.df, repr(g.adjusted), int(g.gvif > threshold)])


def _write_pooled(path, pooled):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "mean", "tau2", "se_mean", "pi_low", "pi_high", "significant", "n_models"])
        for p in pooled:
            w.writerow([p.variable, repr(p.mean), repr(p.tau2), repr(p.se_mean), repr(p.pi_low),
                        repr(p.pi_high), int(p.significant), p.n_models])


def read_ranking(out: str | Path) -> tuple[list[str], str]:
    """Variables to grow the score from, in rank order, and the ranking method."""
    out = Path(out)
    path = out / RANK_TABLE
    if not path.exists():
        raise DataError(f"no rank artifacts in {out}; run the 'rank' command first")
    table = rank.read_rank_table(path)
    order = table.order
    if table.method == "shapleyvic":
        kept_path = out / KEPT_FILE
        if not kept_path.exists():
            raise DataError(f"{kept_path} missing; rerun the 'rank' command")
        kept = set(kept_path.read_text(encoding="utf-8").split())
        order = [v for v in order if v in kept]
    return order, table.method


BUILD_ARTIFACTS = ("manifest_build.json", "cuts.json", "parsimony.csv", "scoring_table.csv", "evaluation.json")


def _flag(cohort: tabular.Cohort, name: str, rows: np.ndarray) -> np.ndarray:
    v = cohort.variable(name)
    if v.is_categorical:
        truthy = {"1", "yes", "y", "true", "t"}
        lab = np.array([c.strip().lower() in truthy for c in v.categories])
        return lab[cohort.values[name][rows]].astype(np.int64)
    return (cohort.values[name][rows] > 0).astype(np.int64)


def lace_scores(cohort: tabular.Cohort, mapping: LaceMapping, partition: str = "test") -> np.ndarray:
    rows = cohort.rows(partition)
    num = lambda name: cohort.values[name][rows] if not cohort.variable(name).is_categorical else \
        np.array([float(x) for x in cohort.labels(name, rows)])
    los = num(mapping.los)
    ed = num(mapping.ed_visits)
    if isinstance(mapping.acute, bool):
        acute = np.full(len(rows), int(mapping.acute))
    else:
        acute = _flag(cohort, mapping.acute, rows)
    if mapping.cci:
        cci = num(mapping.cci).astype(np.int64)
    else:
        weights = baseline.load_weights(mapping.weights)
        flags = {k: _flag(cohort, col, rows) for k, col in mapping.comorbidities.items()}
        cci = np.array([baseline.cci({k: int(f[i]) for k, f in flags.items()}, weights) for i in range(len(rows))])
    return np.array([
        baseline.lace_score(baseline.LaceInput(int(los[i]), bool(acute[i]), int(cci[i]), int(ed[i])))
        for i in range(len(rows))
    ])


def _auc_dict(r: glm.AucResult) -> dict:
    return {"auc": r.auc, "ci_low": r.ci_low, "ci_high": r.ci_high, "n_boot": r.n_boot}


def cmd_build(cfg: PipelineConfig, threads: int = 1, force: bool = False) -> dict:
    """Parsimony curve, final scoring table and test-set evaluation from existing rank artifacts."""
    ranking, method = read_ranking(cfg.out)
    art = Artifacts(cfg.out, BUILD_ARTIFACTS, force)
    try:
        cohort = prepare_cohort(cfg)
        sc = cfg.scorecard
        cuts = {
            v: _stage("cuts", scorecard.make_cuts, cohort, v, sc.cut_method, sc.kmeans_k, cfg.seed)
            for v in ranking if not cohort.variable(v).is_categorical
        }
        curve = _stage("parsimony", scorecard.parsimony, cohort, ranking, cuts, "validation", threads)
        suggested = scorecard.suggest_m(curve, sc.min_gain)
        final_m = sc.final_m or suggested
        if final_m > len(ranking):
            raise ConfigError(f"final_m={final_m} exceeds the {len(ranking)} ranked variables")
        table = _stage("points", scorecard.derive_points, cohort, ranking[:final_m], cuts)
        if sc.fine_tune:
            table = _stage("fine_tune", scorecard.fine_tune, cohort, table, sc.fine_tune)
        test_rows = cohort.rows("test")
        y_test = cohort.outcome[test_rows]
        scores = scorecard.score_cohort(table, cohort, "test")
        evaluation: dict[str, Any] = {
            "method": method,
            "suggested_m": suggested,
            "final_m": final_m,
            "variables": table.names,
            "max_total": table.max_total,
            "test": _auc_dict(_stage("evaluate", glm.auc_ci, scores, y_test, cfg.n_boot, cfg.seed)),
        }
        variables = candidate_variables(cfg, cohort)
        design, y = tabular.encode(cohort, "train", variables)
        full = _stage("evaluate", glm.fit_logistic, design, y)
        X_test, _ = tabular.encode(cohort, "test", variables)
        evaluation["full_logistic_test"] = _auc_dict(
            glm.auc_ci(full.linear_predictor(X_test), y_test, cfg.n_boot, cfg.seed))
        evaluation["full_logistic_variables"] = len(variables)
        if cfg.lace.mapped:
            lace = _stage("lace", lace_scores, cohort, cfg.lace, "test")
            evaluation["lace_test"] = _auc_dict(glm.auc_ci(lace, y_test, cfg.n_boot, cfg.seed))
        _write_json(art.path("cuts.json"), {
            v: {"cuts": list(table[v].cuts.cuts), "method": table[v].cuts.method}
            for v in table.names if table[v].cuts is not None
        })
        scorecard.write_parsimony(art.path("parsimony.csv"), curve)
        scorecard.write_scoring_table(art.path("scoring_table.csv"), table)
        _write_json(art.path("evaluation.json"), evaluation)
        _write_json(art.path("manifest_build.json"), _manifest(cfg, "build", {"ranking": ranking}))
        art.publish()
    except BaseException:
        art.discard()
        raise
    return evaluation


def score_file(table_path: str | Path, data_path: str | Path, delimiter: str = ",") -> tuple[list[str], list[list[str]], list[str]]:
    """Score every row of a data file. Returns (header, rows with total_score, diagnostics)."""
    table = scorecard.read_scoring_table(table_path)
    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            # nothing to score: echo the expected columns so the output stays well formed
            return table.names + ["total_score"], [], []
        pos = {h.strip(): i for i, h in enumerate(header)}
        absent = [v for v in table.names if v not in pos]
        if absent:
            return header + ["total_score"], [], [f"{data_path}: missing column(s) {absent}"]
        out, problems = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                row = {v: rec[pos[v]].strip() for v in table.names}
                out.append(rec + [str(scorecard.score_row(table, row))])
            except IndexError:
                problems.append(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            except DataError as exc:
                problems.append(f"line {lineno}: {exc}")
    return header + ["total_score"], out, problems


def cmd_synth(out_dir: str | Path, spec_path: str | Path | None = None, seed: int | None = None,
              n: int | None = None, force: bool = False) -> tuple[Path, Path]:
    spec = synth.load_spec(spec_path) if spec_path else synth.default_spec()
    if seed is not None:
        spec = replace(spec, seed=seed)
    if n is not None:
        spec = replace(spec, n=n)
    art = Artifacts(out_dir, ("data.csv", "schema.yaml", "spec.yaml"), force)
    try:
        cohort = synth.generate(spec)
        tabular.write_cohort(cohort, art.path("data.csv"))
        tabular.write_schema(art.path("schema.yaml"), cohort.schema, cohort.outcome_name)
        synth.write_spec(art.path("spec.yaml"), spec)
        art.publish()
    except BaseException:
        art.discard()
        raise
    return Path(out_dir) / "data.csv", Path(out_dir) / "schema.yaml"

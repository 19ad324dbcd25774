"""End-to-end experiment runner: fit a reward, pseudo-label, train the
conditional score, generate for each target value and evaluate.

Every stage is a standalone function whose randomness comes from
``substream(seed, stage, ...)``. Running the stages one at a time with
persisted intermediates therefore reproduces ``run_pipeline`` exactly.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import LabeledSet, PreferenceSet, PseudoLabeledSet, make_labeled, make_preferences, make_unlabeled, pseudo_label
from .metrics import EvalReport, evaluate
from .oracle import DiffusionSchedule, OracleScore, default_t0, schedule
from .reward import LinearRewardEstimate, fit_bt_mle, fit_ridge
from .rng import (
    STAGE_GENERATE,
    STAGE_LABELED,
    STAGE_PSEUDO,
    STAGE_TARGET,
    STAGE_TRAIN,
    STAGE_UNLABELED,
    STAGE_WORLD,
    substream,
)
from .sampler import GenerationRun, generate
from .score import ScoreModel, TrainOptions, train
from .world import SubspaceWorld, make_world

log = logging.getLogger(__name__)

DEFAULT_TARGETS = (0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 12.0, 16.0)


class ConfigError(ValueError):
    pass


class StageFailed(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    # world
    D: int = 64
    d: int = 16
    c: float = 5.0
    sigma: float = 0.1
    nu: float | None = None  # None: 1/sqrt(D)
    # data
    n1: int = 65536
    n2: int = 8192
    mode: str = "ridge"  # ridge | bt
    lam: float = 1.0
    bt_tol: float = 1e-8
    bt_max_iters: int = 10_000
    # score
    score: str = "learned"  # learned | oracle
    T: float = 10.0
    t0: float | None = None  # None: default_t0(D, d, n1)
    eta: float = 5e-3
    batch: int = 128
    lr: float = 0.2
    iters: int = 20_000
    epochs: float | None = 40.0
    t_samples: int = 4
    backend: str | None = None
    # evaluation
    targets: tuple = DEFAULT_TARGETS
    n_gen: int = 2048
    n_ref: int = 4096
    seeds: tuple = (0, 1, 2, 3, 4)
    output: str = "results.csv"
    format: str = "csv"

    def __post_init__(self) -> None:
        self.targets = tuple(float(a) for a in self.targets)
        self.seeds = tuple(int(s) for s in self.seeds)

    def validate(self) -> "ExperimentConfig":
        err = []
        if not (1 <= self.d <= self.D):
            err.append("need 1 <= d <= D")
        for k in ("c", "sigma", "lam", "bt_tol"):
            if getattr(self, k) < 0:
                err.append(f"{k} must be nonnegative")
        if self.nu is not None and self.nu <= 0:
            err.append("nu must be positive")
        for k in ("n1", "n2", "batch", "t_samples", "iters", "bt_max_iters"):
            if getattr(self, k) < 1:
                err.append(f"{k} must be at least 1")
        if self.n_gen < 0 or self.n_ref < 1:
            err.append("n_gen must be nonnegative and n_ref positive")
        if self.mode not in ("ridge", "bt"):
            err.append("mode must be ridge or bt")
        if self.mode == "ridge" and self.lam <= 0:
            err.append("ridge needs lam > 0")
        if self.score not in ("learned", "oracle"):
            err.append("score must be learned or oracle")
        if self.format not in ("csv", "json"):
            err.append("format must be csv or json")
        if self.epochs is not None and self.epochs <= 0:
            err.append("epochs must be positive")
        if self.lr <= 0 or self.eta <= 0:
            err.append("lr and eta must be positive")
        if self.backend not in (None, "python", "cython"):
            err.append("backend must be python or cython")
        if not all(math.isfinite(a) for a in self.targets):
            err.append("targets must be finite")
        if len(set(self.seeds)) != len(self.seeds) or any(s < 0 for s in self.seeds):
            err.append("seeds must be distinct nonnegative integers")
        t0 = self.resolved_t0()
        if not (0 < t0 < self.T):
            err.append(f"need 0 < t0 < T (t0 resolves to {t0:.6g})")
        if err:
            raise ConfigError("; ".join(err))
        return self

    def resolved_t0(self) -> float:
        return default_t0(self.D, self.d, self.n1) if self.t0 is None else float(self.t0)

    def resolved_nu(self) -> float:
        return 1.0 / math.sqrt(self.D) if self.nu is None else float(self.nu)

    def schedule(self) -> DiffusionSchedule:
        return schedule(self.T, self.resolved_t0(), self.eta)

    def train_options(self, seed: int) -> TrainOptions:
        return TrainOptions(
            batch=self.batch, lr=self.lr, iters=self.iters, t_samples=self.t_samples,
            seed=_int_seed(substream(seed, STAGE_TRAIN)), backend=self.backend, epochs=self.epochs,
        )

    def resolved(self) -> dict:
        out = asdict(self)
        out["t0"] = self.resolved_t0()
        out["nu"] = self.resolved_nu()
        out["targets"] = list(self.targets)
        out["seeds"] = list(self.seeds)
        return out


def full_preset(**overrides) -> ExperimentConfig:
    """Synthetic-study settings: D=64, d=16, c=5, lam=1, n2=8192, n1=65536,
    2048 samples per target, five seeds."""
    return replace(ExperimentConfig(), **overrides)


PRESETS = {"full": full_preset}


# config text format ------------------------------------------------------

def _field_types() -> dict:
    return {f.name: f for f in fields(ExperimentConfig)}


def _parse_value(name: str, text: str):
    text = text.strip()
    if name in ("targets", "seeds"):
        items = [s for s in (p.strip() for p in text.split(",")) if s]
        return tuple(float(s) for s in items) if name == "targets" else tuple(int(s) for s in items)
    if name in ("nu", "t0", "epochs"):
        return None if text.lower() in ("auto", "none", "") else float(text)
    if name == "backend":
        return None if text.lower() in ("auto", "none", "") else text
    default = getattr(ExperimentConfig(), name)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = _field_types()
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {ln}: expected key = value")
        if key not in known:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"line {ln}: bad value for {key}: {exc}") from exc
    return replace(base or ExperimentConfig(), **values)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), base)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif v is None:
            v = "auto"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# stages --------------------------------------------------------------------

def _int_seed(g: np.random.Generator) -> int:
    return int(g.integers(0, 2**63 - 1))


def _target_key(a: float) -> int:
    return int.from_bytes(struct.pack("<d", float(a)), "little")


def build_world(cfg: ExperimentConfig, seed: int) -> SubspaceWorld:
    return make_world(
        cfg.D, cfg.d, cfg.c, cfg.sigma, substream(seed, STAGE_WORLD),
        pseudo_noise=cfg.resolved_nu(), mean_zero_reward=cfg.mode == "bt",
    )


def fit_stage(cfg: ExperimentConfig, world: SubspaceWorld, seed: int):
    """Draw the small supervised set and fit the reward; returns ``(data, estimate)``."""
    g = substream(seed, STAGE_LABELED)
    if cfg.mode == "ridge":
        data = make_labeled(world, cfg.n2, g)
        return data, fit_ridge(data, cfg.lam)
    data = make_preferences(world, cfg.n2, g)
    return data, fit_bt_mle(data, max_iters=cfg.bt_max_iters, tol=cfg.bt_tol)


def unlabeled_stage(cfg: ExperimentConfig, world: SubspaceWorld, seed: int) -> np.ndarray:
    return make_unlabeled(world, cfg.n1, substream(seed, STAGE_UNLABELED))


def pseudo_stage(cfg: ExperimentConfig, points: np.ndarray, estimate: LinearRewardEstimate, seed: int) -> PseudoLabeledSet:
    return pseudo_label(points, estimate, cfg.resolved_nu(), substream(seed, STAGE_PSEUDO))


def train_stage(cfg: ExperimentConfig, data: PseudoLabeledSet, seed: int) -> ScoreModel:
    return train(data, cfg.schedule(), cfg.train_options(seed), d=cfg.d, nu0=cfg.resolved_nu())


def oracle_for(cfg: ExperimentConfig, world: SubspaceWorld, estimate: LinearRewardEstimate) -> OracleScore:
    """Exact conditional score under the pseudo-label law (estimate plus noise ``nu``)."""
    return OracleScore(world, estimate.theta, cfg.resolved_nu())


def generate_stage(cfg: ExperimentConfig, score, a: float, seed: int) -> GenerationRun:
    # same noise for every target value (common random numbers), so
    # differences across the sweep are not masked by sampling noise
    gen_seed = _int_seed(substream(seed, STAGE_GENERATE))
    return generate(score, a, cfg.n_gen, cfg.schedule(), gen_seed, D=cfg.D, source=cfg.score)


def eval_stage(
    cfg: ExperimentConfig,
    run: GenerationRun,
    world: SubspaceWorld,
    estimate: LinearRewardEstimate,
    V: np.ndarray,
    data,
    seed: int,
) -> EvalReport:
    return evaluate(
        run, world, estimate, oracle_for(cfg, world, estimate), V,
        labeled=data if isinstance(data, LabeledSet) else None,
        preferences=data if isinstance(data, PreferenceSet) else None,
        lam=cfg.lam, n1=cfg.n1, seed=seed, n_ref=cfg.n_ref,
        ref_seed=substream(seed, STAGE_TARGET, _target_key(run.a)),
    )


# runner ------------------------------------------------------------------

@dataclass
class PipelineResult:
    reports: list = field(default_factory=list)
    failed_stage: str | None = None


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageFailed(name, exc) from exc


def run_seed(cfg: ExperimentConfig, seed: int, sink: list | None = None) -> list[EvalReport]:
    """All target values for one seed; reports are appended to ``sink`` as they finish."""
    sink = [] if sink is None else sink
    world = _stage("world", build_world, cfg, seed)
    data, est = _stage("fit", fit_stage, cfg, world, seed)
    if cfg.score == "oracle":
        score = oracle_for(cfg, world, est)
        V = world.A
    else:
        points = _stage("unlabeled", unlabeled_stage, cfg, world, seed)
        pseudo = _stage("pseudo-label", pseudo_stage, cfg, points, est, seed)
        score = _stage("train-score", train_stage, cfg, pseudo, seed)
        V = score.V
    for a in cfg.targets:
        run = _stage("generate", generate_stage, cfg, score, a, seed)
        sink.append(_stage("eval", eval_stage, cfg, run, world, est, V, data, seed))
    return sink


def run_pipeline(cfg: ExperimentConfig, persist: bool = False) -> list[EvalReport]:
    """One ``EvalReport`` per (seed, target). With ``persist`` the reports
    (partial ones on failure, plus a ``.failed`` marker) go to ``cfg.output``."""
    cfg.validate()
    reports: list[EvalReport] = []
    try:
        for seed in cfg.seeds:
            run_seed(cfg, seed, reports)
            log.info("seed %d done (%d reports)", seed, len(reports))
    except StageFailed as exc:
        if persist:
            emit(reports, cfg.output, cfg.format, cfg)
            Path(str(cfg.output) + ".failed").write_text(f"stage = {exc.stage}\nerror = {exc.cause!r}\n")
        raise
    if persist:
        emit(reports, cfg.output, cfg.format, cfg)
    return reports


# output ------------------------------------------------------------------

def _fmt_cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def sidecar_path(path) -> Path:
    return Path(str(path) + ".config.json")


def emit(reports, path, format: str = "csv", cfg: ExperimentConfig | None = None) -> None:
    """Write reports with a fixed column order and a resolved-config sidecar."""
    names = EvalReport.field_names()
    path = Path(path)
    if format == "csv":
        lines = [",".join(names)]
        lines += [",".join(_fmt_cell(getattr(r, k)) for k in names) for r in reports]
        path.write_text("\n".join(lines) + "\n")
    elif format == "json":
        rows = [{k: _json_value(getattr(r, k)) for k in names} for r in reports]
        path.write_text(json.dumps({"columns": names, "rows": rows}, indent=1) + "\n")
    else:
        raise ValueError("format must be csv or json")
    side = {"version": __version__, "config": cfg.resolved() if cfg is not None else None}
    sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def _json_value(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return v if math.isfinite(v) else None


def _coerce(name: str, raw) -> float | int:
    kind = {f.name: f.type for f in fields(EvalReport)}[name]
    if kind == "int":
        return int(raw)
    return float("nan") if raw is None else float(raw)


def read_reports(path) -> list[EvalReport]:
    path = Path(path)
    names = EvalReport.field_names()
    text = path.read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("columns") != names:
            raise ValueError("column list does not match EvalReport")
        out = []
        for row in doc["rows"]:
            if list(row) != names:
                raise ValueError("row keys do not match EvalReport")
            out.append(EvalReport(**{k: _coerce(k, row[k]) for k in names}))
        return out
    lines = text.splitlines()
    if not lines or lines[0].split(",") != names:
        raise ValueError("header does not match EvalReport")
    return [EvalReport(**{k: _coerce(k, v) for k, v in zip(names, ln.split(","))}) for ln in lines[1:] if ln]

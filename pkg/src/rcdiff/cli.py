"""Command-line entry point.

Every subcommand accepts the experiment-config flags (``--D``, ``--n1``,
``--mode`` ...), ``--config PATH`` and ``--preset NAME``. Precedence is
defaults < preset < config file < flags. Stage subcommands take ``--seed``
and draw the same random streams as ``run`` does for that seed, so chaining
them through files reproduces ``run`` exactly.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import __version__, store
from .datasets import LabeledSet
from .pipeline import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    StageFailed,
    _parse_value,
    config_to_text,
    emit,
    eval_stage,
    fit_stage,
    generate_stage,
    load_config,
    oracle_for,
    pseudo_stage,
    read_reports,
    run_pipeline,
    train_stage,
    unlabeled_stage,
    build_world,
)
from .sampler import GenerationRun

# extra spellings accepted for some config keys
ALIASES = {"lam": ["--lambda"], "bt_tol": ["--tol"], "n_gen": ["--n"]}


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("experiment config")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    for f in fields(ExperimentConfig):
        if f.name in skip:
            continue
        names = [f"--{f.name}"] + ALIASES.get(f.name, [])
        g.add_argument(*names, dest=f"cfg_{f.name}", default=argparse.SUPPRESS, metavar=f.name.upper())


def resolve_config(ns: argparse.Namespace) -> ExperimentConfig:
    cfg = PRESETS[ns.preset]() if getattr(ns, "preset", None) else ExperimentConfig()
    if getattr(ns, "config", None):
        cfg = load_config(ns.config, cfg)
    over = {}
    for f in fields(ExperimentConfig):
        key = f"cfg_{f.name}"
        if hasattr(ns, key) and getattr(ns, key) is not None:
            try:
                over[f.name] = _parse_value(f.name, getattr(ns, key))
            except ValueError as exc:
                raise ConfigError(f"--{f.name}: {exc}") from exc
    spec = getattr(ns, "score_spec", None)
    if spec is not None:
        over["score"] = "oracle" if spec == "oracle" else "learned"
    return replace(cfg, **over).validate()


def _seed(ns, cfg: ExperimentConfig) -> int:
    return cfg.seeds[0] if ns.seed is None else ns.seed


def _load_data(path):
    header = Path(path).read_text().split("\n", 1)[0].split(",")
    return store.load_preferences(path) if header[-1] == "winner" else store.load_labeled(path)


def _load_score(spec: str, cfg, world_path, estimate_path):
    if spec == "oracle":
        if not (world_path and estimate_path):
            raise ConfigError("--score oracle needs --world and --estimate")
        return oracle_for(cfg, store.load_world(world_path), store.load_estimate(estimate_path))
    if spec.startswith("ckpt:"):
        return store.load_model(spec[5:])
    raise ConfigError("--score must be 'oracle' or 'ckpt:PATH'")


# subcommands -------------------------------------------------------------

def cmd_world(ns, cfg):
    world = build_world(cfg, _seed(ns, cfg))
    store.save_world(world, ns.out_file)
    print(f"wrote {ns.out_file}")


def cmd_fit(ns, cfg):
    seed = _seed(ns, cfg)
    world = store.load_world(ns.world)
    data, est = fit_stage(cfg, world, seed)
    store.save_estimate(est, ns.out_file)
    if ns.data_out:
        (store.save_labeled if isinstance(data, LabeledSet) else store.save_preferences)(data, ns.data_out)
    print(f"wrote {ns.out_file} ({est.mode}, {est.iterations} iterations, converged={est.converged})")


def cmd_pseudo(ns, cfg):
    seed = _seed(ns, cfg)
    world = store.load_world(ns.world)
    est = store.load_estimate(ns.estimate)
    pseudo = pseudo_stage(cfg, unlabeled_stage(cfg, world, seed), est, seed)
    store.save_labeled(pseudo, ns.out_file)
    print(f"wrote {ns.out_file} ({len(pseudo)} rows)")


def cmd_train(ns, cfg):
    model = train_stage(cfg, store.load_pseudo(ns.data), _seed(ns, cfg))
    store.save_model(model, ns.out_file)
    print(f"wrote {ns.out_file} (final loss {model.loss_trace[-1]:.6g})")


def cmd_generate(ns, cfg):
    score = _load_score(ns.score_spec, cfg, ns.world, ns.estimate)
    run = generate_stage(cfg, score, ns.target, _seed(ns, cfg))
    store.save_points(run.output, ns.out_file)
    print(f"wrote {ns.out_file} ({run.n_samples} rows)")


def cmd_eval(ns, cfg):
    seed = _seed(ns, cfg)
    world = store.load_world(ns.world)
    est = store.load_estimate(ns.estimate)
    V = world.A if ns.score_spec == "oracle" else _load_score(ns.score_spec, cfg, None, None).V
    X = store.load_points(ns.gen)
    run = GenerationRun(cfg.score, float(ns.target), X.shape[0], cfg.schedule(), seed, X)
    report = eval_stage(cfg, run, world, est, V, _load_data(ns.data), seed)
    out = Path(ns.out_file)
    existing = read_reports(out) if out.exists() else []
    emit(existing + [report], out, "json" if out.suffix == ".json" else "csv", cfg)
    print(json.dumps(report.as_dict()))


def cmd_run(ns, cfg):
    reports = run_pipeline(cfg, persist=True)
    print(f"wrote {cfg.output} ({len(reports)} reports)")


def cmd_sweep(ns, cfg):
    """Repeat ``run`` for each value of one config key; outputs get a suffix."""
    base = Path(cfg.output)
    for raw in ns.values.split(";" if ";" in ns.values else ","):
        val = _parse_value(ns.param, raw)
        sub = replace(cfg, **{ns.param: val}, output=str(base.with_name(f"{base.stem}_{ns.param}={raw.strip()}{base.suffix}")))
        reports = run_pipeline(sub.validate(), persist=True)
        print(f"wrote {sub.output} ({len(reports)} reports)")


def cmd_show_config(ns, cfg):
    sys.stdout.write(config_to_text(cfg))


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcdiff", description="Reward-conditioned diffusion on subspace data.", allow_abbrev=False)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, skip=()):
        sp = sub.add_parser(name, help=help_, allow_abbrev=False)
        _add_config_flags(sp, skip)
        sp.set_defaults(fn=fn)
        return sp

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="default: first entry of seeds")

    sp = add("world", cmd_world, "draw a ground-truth world")
    seeded(sp)
    sp.add_argument("out_file", metavar="OUT")

    sp = add("fit", cmd_fit, "draw supervised data and fit the reward")
    seeded(sp)
    sp.add_argument("--world", required=True)
    sp.add_argument("--data-out")
    sp.add_argument("out_file", metavar="OUT")

    sp = add("pseudo-label", cmd_pseudo, "draw unlabeled data and pseudo-label it")
    seeded(sp)
    sp.add_argument("--world", required=True)
    sp.add_argument("--estimate", required=True)
    sp.add_argument("out_file", metavar="OUT")

    sp = add("train-score", cmd_train, "train the conditional score model")
    seeded(sp)
    sp.add_argument("--data", required=True, help="pseudo-labeled CSV")
    sp.add_argument("out_file", metavar="OUT")

    sp = add("generate", cmd_generate, "sample conditioned on a target value", skip=("score",))
    seeded(sp)
    sp.add_argument("--target", type=float, required=True)
    sp.add_argument("--score", dest="score_spec", default="oracle", help="oracle or ckpt:PATH")
    sp.add_argument("--world")
    sp.add_argument("--estimate")
    sp.add_argument("out_file", metavar="OUT")

    sp = add("eval", cmd_eval, "evaluate a generated batch; appends one report row", skip=("score",))
    seeded(sp)
    sp.add_argument("--target", type=float, required=True)
    sp.add_argument("--world", required=True)
    sp.add_argument("--estimate", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--data", required=True, help="labeled or preference CSV from fit")
    sp.add_argument("--score", dest="score_spec", default="oracle", help="oracle or ckpt:PATH")
    sp.add_argument("out_file", metavar="OUT")

    add("run", cmd_run, "run the whole pipeline for every seed and target")

    sp = add("sweep", cmd_sweep, "run the pipeline once per value of one config key")
    sp.add_argument("--param", required=True, choices=[f.name for f in fields(ExperimentConfig)])
    sp.add_argument("--values", required=True, help="comma list (use ';' when values contain commas)")

    add("show-config", cmd_show_config, "print the resolved config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        ns.fn(ns, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Plain-text persistence.

Worlds, reward estimates and score-model checkpoints use a line-oriented
``key = value`` format. Arrays are written as ``key = R x C : v v v ...``
(row-major, or ``N : ...`` for vectors) with 17 significant digits, so
every double round-trips exactly. The first line names the record kind::

    # rcdiff world
    D = 3
    A = 3x2 : 1 0 0 1 0 0

Datasets and generated batches are CSV files with a header row; points
occupy columns ``x_0 .. x_{D-1}``.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .datasets import LabeledSet, PreferenceSet, PseudoLabeledSet
from .oracle import DiffusionSchedule
from .reward import LinearRewardEstimate
from .score import ScoreModel
from .world import SubspaceWorld

MAGIC = "# rcdiff "


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _encode(value) -> str:
    if isinstance(value, np.ndarray):
        body = " ".join(fmt(v) for v in value.ravel())
        shape = "x".join(str(s) for s in value.shape)
        return f"{shape} : {body}".rstrip()
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt(value)
    return str(value)


def _decode_array(text: str) -> np.ndarray:
    shape_txt, _, body = text.partition(":")
    shape = tuple(int(s) for s in shape_txt.strip().split("x"))
    vals = np.array([float(v) for v in body.split()], dtype=float)
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"array has {vals.size} values, shape says {shape}")
    return vals.reshape(shape)


def write_record(path, kind: str, items: dict) -> None:
    lines = [MAGIC + kind]
    lines += [f"{k} = {_encode(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_record(path, kind: str | None = None) -> tuple[str, dict]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(MAGIC):
        raise ValueError(f"{path}: not an rcdiff record")
    found = text[0][len(MAGIC):].strip()
    if kind is not None and found != kind:
        raise ValueError(f"{path}: expected a {kind} record, found {found}")
    out: dict[str, str] = {}
    for ln, line in enumerate(text[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{ln}: expected key = value")
        out[key.strip()] = val.strip()
    return found, out


# worlds ------------------------------------------------------------------

def save_world(world: SubspaceWorld, path) -> None:
    write_record(path, "world", {
        "D": world.D,
        "d": world.d,
        "c": world.penalty_coef,
        "sigma": world.label_noise,
        "nu": world.pseudo_noise,
        "A": world.A,
        "Sigma": world.Sigma,
        "theta": world.theta,
    })


def load_world(path) -> SubspaceWorld:
    _, r = read_record(path, "world")
    return SubspaceWorld(
        D=int(r["D"]),
        d=int(r["d"]),
        A=_decode_array(r["A"]),
        Sigma=_decode_array(r["Sigma"]),
        theta=_decode_array(r["theta"]),
        penalty_coef=float(r["c"]),
        label_noise=float(r["sigma"]),
        pseudo_noise=float(r["nu"]),
    )


# reward estimates --------------------------------------------------------

def save_estimate(est: LinearRewardEstimate, path) -> None:
    write_record(path, "estimate", {
        "mode": est.mode,
        "lambda": est.lam,
        "loss": est.loss,
        "iterations": est.iterations,
        "converged": est.converged,
        "theta": est.theta,
    })


def load_estimate(path) -> LinearRewardEstimate:
    _, r = read_record(path, "estimate")
    return LinearRewardEstimate(
        theta=_decode_array(r["theta"]),
        mode=r["mode"],
        lam=float(r["lambda"]),
        loss=float(r["loss"]),
        iterations=int(r["iterations"]),
        converged=r["converged"] == "true",
    )


# score models ------------------------------------------------------------

def save_model(model: ScoreModel, path) -> None:
    write_record(path, "model", {
        "D": model.D,
        "d": model.d,
        "T": model.schedule.T,
        "t0": model.schedule.t0,
        "eta": model.schedule.eta,
        "eps": model.eps,
        "log_nu": model.log_nu,
        "V": model.V,
        "L": model.L,
        "b": model.b,
    })


def load_model(path) -> ScoreModel:
    _, r = read_record(path, "model")
    return ScoreModel(
        V=_decode_array(r["V"]),
        L=_decode_array(r["L"]),
        b=_decode_array(r["b"]),
        log_nu=float(r["log_nu"]),
        schedule=DiffusionSchedule(float(r["T"]), float(r["t0"]), float(r["eta"])),
        eps=float(r["eps"]),
    )


# CSV ---------------------------------------------------------------------

def _x_cols(prefix: str, D: int) -> list[str]:
    return [f"{prefix}_{j}" for j in range(D)]


def _write_csv(path, header: list[str], cols: list[np.ndarray]) -> None:
    arrs = [np.asarray(c, dtype=float) for c in cols]
    block = np.column_stack([c if c.ndim == 2 else c.reshape(len(c), 1) for c in arrs]) if arrs else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        if block is not None:
            for row in block:
                w.writerow([fmt(v) for v in row])


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    return header, data.reshape(len(rows) - 1, len(header))


def _split_points(header: list[str], data: np.ndarray, prefix: str) -> np.ndarray:
    idx = [i for i, h in enumerate(header) if h.startswith(prefix + "_")]
    if [header[i] for i in idx] != _x_cols(prefix, len(idx)):
        raise ValueError(f"columns {prefix}_0.. missing or out of order")
    return data[:, idx]


def save_points(X: np.ndarray, path) -> None:
    _write_csv(path, _x_cols("x", X.shape[1]), [X])


def load_points(path) -> np.ndarray:
    header, data = _read_csv(path)
    return _split_points(header, data, "x")


def save_labeled(data: LabeledSet | PseudoLabeledSet, path) -> None:
    _write_csv(path, _x_cols("x", data.points.shape[1]) + ["y"], [data.points, data.labels])


def _load_xy(path):
    header, data = _read_csv(path)
    if header[-1] != "y":
        raise ValueError(f"{path}: last column must be y")
    return _split_points(header, data, "x"), data[:, -1].copy()


def load_labeled(path) -> LabeledSet:
    return LabeledSet(*_load_xy(path))


def load_pseudo(path) -> PseudoLabeledSet:
    return PseudoLabeledSet(*_load_xy(path))


def save_preferences(data: PreferenceSet, path) -> None:
    D = data.first.shape[1]
    _write_csv(path, _x_cols("first", D) + _x_cols("second", D) + ["winner"],
               [data.first, data.second, data.winner])


def load_preferences(path) -> PreferenceSet:
    header, data = _read_csv(path)
    if header[-1] != "winner":
        raise ValueError(f"{path}: last column must be winner")
    return PreferenceSet(
        _split_points(header, data, "first"),
        _split_points(header, data, "second"),
        data[:, -1].astype(np.int8),
    )


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    Path(tmp).write_text(text)
    os.replace(tmp, path)

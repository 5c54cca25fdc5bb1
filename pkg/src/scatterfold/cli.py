"""Command-line entry point.

Every command resolves a run config from three layers, later ones winning:
built-in defaults, an optional ``--config`` JSON file, then explicit flags.
The resolved config is validated before any compute and written next to the
outputs as ``config.json``.

Randomness flows from one root ``seed``.  Stage ``s`` uses
``SeedSequence([seed, STAGES.index(s)]).generate_state(1)[0]``, so a stage
run on its own (``train-gsae``) gets the same seed as inside ``pipeline``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("scatterfold.cli")

STAGES = ("data", "split", "gsae", "sin", "eval", "interpolate")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "toy": {"n": 10, "p": 0.5, "steps": 9999},
    "folds": {"sequence": None, "max_structures": 20000},
    "scattering": {"j_max": None, "q_max": 4, "orders": [0, 1, 2], "self_loop_isolated": False},
    "gsae": {
        "latent_dim": 25, "alpha": 0.5, "beta": 1.0, "lr": 1e-4, "iterations": 15000,
        "batch_size": 100, "hidden_dims": [400, 200], "variational": True,
        "standardize_meta": False, "log_every": 100,
    },
    "sin": {
        "hidden_dims": [400, 200], "rank": 16, "threshold": 0.5, "batch_size": 100,
        "pretrain_lr": 1e-3, "pretrain_iterations": 5000, "refine_lr": 1e-4,
        "refine_iterations": 1000, "tol": 1e-4, "window": 500, "eps": 1e-6,
    },
    "eval": {
        "k": [5, 10], "methods": ["gsae", "scattering", "wl", "ged-mds"], "center": False,
        "wl_iterations": 3, "wl_dims": 25, "mds_dims": 25, "mds_max": 2000,
    },
    "split": {"train_fraction": 0.7},
    "interpolate": {"start": None, "end": None, "steps": 10},
    "pca": {"dims": 2},
    "pipeline": {"sin": False, "trajectory_pairs": 0, "trajectory_quantile": 0.2},
}

EVAL_METHODS = ("gsae", "scattering", "wl", "ged-mds")

# sections each command reads; anything else in a config file is rejected
SECTIONS = {
    "gen-toy": ("toy",),
    "gen-folds": ("folds",),
    "ingest": (),
    "scatter": ("scattering",),
    "train-gsae": ("gsae", "split"),
    "train-sin": ("sin", "split"),
    "embed": (),
    "eval": ("eval", "scattering"),
    "interpolate": ("interpolate",),
    "pca": ("pca",),
    "pipeline": ("scattering", "gsae", "sin", "eval", "split", "interpolate", "pipeline"),
}


class UsageError(Exception):
    pass


class StageFailure(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


@contextlib.contextmanager
def stage(name: str):
    log.info("stage=%s status=start", name)
    try:
        yield
    except StageFailure:
        raise
    except UsageError:
        raise
    except Exception as exc:  # labelled and re-raised for the exit-code mapping
        from .errors import ConfigError

        if isinstance(exc, ConfigError):
            raise UsageError(f"stage={name} {exc}") from exc
        raise StageFailure(name, exc) from exc
    log.info("stage=%s status=done", name)


def stage_seed(root: int, name: str) -> int:
    import numpy as np

    return int(np.random.SeedSequence([int(root), STAGES.index(name)]).generate_state(1)[0])


# ---------------------------------------------------------------- config


def resolve_config(command: str, file_cfg: dict | None, overrides: dict) -> dict:
    sections = SECTIONS[command]
    cfg = {"seed": DEFAULTS["seed"]}
    for s in sections:
        cfg[s] = copy.deepcopy(DEFAULTS[s])
    if file_cfg:
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key == "seed":
                cfg["seed"] = value
            elif key in DEFAULTS:
                # one run config may serve every command; sections a command
                # does not use are still checked, then ignored
                if not isinstance(value, dict):
                    raise UsageError(f"config section {key!r} must be an object")
                unknown = set(value) - set(DEFAULTS[key])
                if unknown:
                    raise UsageError(f"unknown keys in section {key!r}: {sorted(unknown)}")
                if key in sections:
                    cfg[key].update(value)
            else:
                raise UsageError(f"unknown config section {key!r}")
    for dotted, value in overrides.items():
        if dotted == "seed":
            cfg["seed"] = value
            continue
        section, key = dotted.split(".", 1)
        if section in cfg:
            cfg[section][key] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    from .errors import ConfigError
    from .gsae import GsaeConfig
    from .sin import SinConfig

    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise UsageError("seed must be a nonnegative integer")
    try:
        if "scattering" in cfg:
            scattering_config(cfg)
        if "gsae" in cfg:
            GsaeConfig.from_dict(dict(cfg["gsae"], seed=0))
        if "sin" in cfg:
            SinConfig.from_dict(dict(cfg["sin"], seed=0))
    except (ConfigError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if "eval" in cfg:
        ev = cfg["eval"]
        bad = set(ev["methods"]) - set(EVAL_METHODS)
        if bad:
            raise UsageError(f"unknown eval methods {sorted(bad)}; choose from {EVAL_METHODS}")
        if not ev["k"] or any(int(k) < 1 for k in ev["k"]):
            raise UsageError("eval k values must be positive")
    if "split" in cfg and not 0 < cfg["split"]["train_fraction"] < 1:
        raise UsageError("train_fraction must lie in (0, 1)")
    if "toy" in cfg:
        t = cfg["toy"]
        if t["n"] < 2 or not 0 < t["p"] < 1 or t["steps"] < 0:
            raise UsageError("toy trajectory needs n >= 2, 0 < p < 1, steps >= 0")
    if "folds" in cfg and not cfg["folds"]["sequence"]:
        raise UsageError("gen-folds needs a sequence (--sequence)")
    if "interpolate" in cfg and cfg["interpolate"]["steps"] < 2:
        raise UsageError("interpolate steps must be at least 2")
    if "pipeline" in cfg:
        q = cfg["pipeline"]["trajectory_quantile"]
        if not 0 < q <= 0.5:
            raise UsageError("trajectory_quantile must lie in (0, 0.5]")


def scattering_config(cfg: dict):
    from .scattering import ScatteringConfig

    sc = cfg["scattering"]
    return ScatteringConfig(sc["j_max"], sc["q_max"], tuple(sc["orders"]), bool(sc["self_loop_isolated"]))


def gsae_config(cfg: dict):
    from .gsae import GsaeConfig

    return GsaeConfig.from_dict(dict(cfg["gsae"], seed=stage_seed(cfg["seed"], "gsae")))


def sin_config(cfg: dict):
    from .sin import SinConfig

    return SinConfig.from_dict(dict(cfg["sin"], seed=stage_seed(cfg["seed"], "sin")))


# ---------------------------------------------------------------- helpers


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        from .errors import IoFailure

        raise IoFailure(f"cannot create {path}: {exc}") from exc
    return path


def _write_config(directory: Path, cfg: dict, command: str) -> None:
    from .io import write_json

    write_json(directory / "config.json", {"command": command, **cfg})


def _load_scattering(directory: Path):
    from .io import read_json, read_matrix_csv

    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    _, x, _ = read_matrix_csv(directory / "scattering.csv")
    if x.shape[1] != manifest["feature_len"]:
        from .errors import ManifestMismatch

        raise ManifestMismatch("scattering.csv width disagrees with manifest.json")
    return x, manifest


def _embedding_points(path: Path):
    """Coordinate columns of an embedding/coordinate CSV (trailing ``meta`` dropped)."""
    from .io import read_matrix_csv

    ids, values, header = read_matrix_csv(path)
    keep = [c for c, h in enumerate(header[1:]) if h != "meta"]
    return ids, values[:, keep]


def _signal(dataset):
    import numpy as np

    meta = dataset.meta_array()
    if meta is None:
        return np.arange(len(dataset), dtype=float), "graph_index"
    return meta, dataset.meta_name or "meta"


def _split(cfg: dict, count: int):
    from .graphs import train_test_split

    return train_test_split(count, cfg["split"]["train_fraction"], stage_seed(cfg["seed"], "split"))


def _history_rows(history, alpha: float):
    for it, total, recon, pred, kl in history.rows:
        yield [int(it), float(total), float(recon), None if alpha == 0 else float(pred), float(kl)]


def _isolated_hint(exc):
    from .errors import IsolatedNode

    if isinstance(exc, IsolatedNode):
        return " (rerun with --self-loop-isolated to add self-loops to isolated nodes)"
    return ""


# ---------------------------------------------------------------- commands


def cmd_gen_toy(args, cfg):
    from .graphs import gen_toy_trajectory
    from .io import save_dataset

    t = cfg["toy"]
    out = Path(args.out)
    with stage("gen_toy"):
        d = gen_toy_trajectory(int(t["n"]), float(t["p"]), int(t["steps"]), stage_seed(cfg["seed"], "data"))
        _ensure_dir(out.parent)
        save_dataset(d, out)
        _write_config_sidecar(out, cfg, "gen-toy")
    log.info("stage=gen_toy graphs=%d n=%d out=%s", len(d), d.n, out)


def _write_config_sidecar(out: Path, cfg: dict, command: str):
    from .io import write_json

    write_json(out.with_name(out.name + ".config.json"), {"command": command, **cfg})


def cmd_gen_folds(args, cfg):
    from .graphs import enumerate_folds
    from .io import save_dataset

    f = cfg["folds"]
    out = Path(args.out)
    with stage("gen_folds"):
        d = enumerate_folds(f["sequence"], int(f["max_structures"]), stage_seed(cfg["seed"], "data"))
        _ensure_dir(out.parent)
        save_dataset(d, out)
        _write_config_sidecar(out, cfg, "gen-folds")
    log.info("stage=gen_folds graphs=%d n=%d out=%s", len(d), d.n, out)


def cmd_ingest(args, cfg):
    from .io import read_dot_bracket_file, save_dataset

    out = Path(args.out)
    with stage("ingest"):
        d = read_dot_bracket_file(args.input)
        _ensure_dir(out.parent)
        save_dataset(d, out)
        _write_config_sidecar(out, dict(cfg, input=str(args.input)), "ingest")
    log.info("stage=ingest graphs=%d n=%d meta_name=%s out=%s", len(d), d.n, d.meta_name, out)


def _scatter(dataset, cfg, out: Path):
    from .io import write_json, write_matrix_csv
    from .scattering import scatter_dataset

    sc = scattering_config(cfg)
    x = scatter_dataset(dataset, sc)
    manifest = sc.manifest(dataset.n)
    write_matrix_csv(out / "scattering.csv", x, "f")
    write_json(out / "manifest.json", manifest)
    log.info("stage=scatter graphs=%d feature_len=%d J=%d", len(x), x.shape[1], manifest["J"])
    return x, manifest


def cmd_scatter(args, cfg):
    from .io import load_dataset

    out = _ensure_dir(Path(args.out))
    with stage("scatter"):
        _write_config(out, dict(cfg, dataset=str(args.dataset)), "scatter")
        _scatter(load_dataset(args.dataset), cfg, out)


def _train_gsae(x, dataset, cfg, out: Path, manifest):
    from .gsae import save_gsae, train_gsae
    from .io import write_json, write_rows_csv

    tr, te = _split(cfg, len(x))
    gcfg = gsae_config(cfg)
    meta = dataset.meta_array()
    model, history = train_gsae(x[tr], None if meta is None else meta[tr], gcfg, manifest)
    save_gsae(model, out / "gsae.json")
    write_rows_csv(out / "history.csv", ["iteration", "total", "recon", "pred", "kl"],
                   _history_rows(history, gcfg.alpha))
    write_json(out / "split.json", {"train": tr.tolist(), "test": te.tolist()})
    last = history.rows[-1]
    log.info("stage=train_gsae iterations=%d total=%.6g recon=%.6g pred=%s kl=%.6g",
             gcfg.iterations, last[1], last[2], "n/a" if gcfg.alpha == 0 else f"{last[3]:.6g}", last[4])
    return model, tr, te


def cmd_train_gsae(args, cfg):
    from .io import load_dataset

    out = _ensure_dir(Path(args.out))
    with stage("train_gsae"):
        _write_config(out, dict(cfg, dataset=str(args.dataset), scattering_dir=str(args.scattering)),
                      "train-gsae")
        x, manifest = _load_scattering(args.scattering)
        dataset = load_dataset(args.dataset)
        _check_rows(x, dataset)
        model, tr, te = _train_gsae(x, dataset, cfg, out, manifest)
        _energy_report(model, x, dataset, te, out)


def _check_rows(x, dataset):
    from .errors import LengthMismatch

    if len(x) != len(dataset):
        raise LengthMismatch(f"{len(x)} scattering rows for {len(dataset)} graphs")


def _energy_report(model, x, dataset, te, out: Path):
    """Held-out regressor MSE; ``n/a`` for an unsupervised (alpha = 0) model."""
    from .evaluation import energy_mse_report
    from .gsae import predict_energy, reconstruction_mse
    from .io import write_rows_csv

    meta = dataset.meta_array()
    mse = None
    if meta is not None and model.regressor_trained:
        mse = energy_mse_report(predict_energy(model, x[te]), meta[te])
    recon = reconstruction_mse(model, x[te])
    write_rows_csv(out / "gsae_report.csv", ["split", "recon_mse", "pred_mse"], [["test", recon, mse]])
    log.info("stage=gsae_report recon_mse=%.6g pred_mse=%s", recon, "n/a" if mse is None else f"{mse:.6g}")


def _train_sin(x, dataset, cfg, out: Path, manifest):
    from .io import write_rows_csv
    from .sin import (
        SinModel,
        edge_accuracy,
        format_error_e3,
        hard_rescatter_errors,
        pretrain_sin,
        refine_sin,
        save_sin,
        soft_rescatter_mse,
    )
    import numpy as np

    tr, te = _split(cfg, len(x))
    scfg = sin_config(cfg)
    adj = dataset.adjacency_stack()
    model = SinModel(manifest, scfg, np.random.default_rng(scfg.seed))
    bce = pretrain_sin(model, adj[tr], x[tr], scfg)
    refine = refine_sin(model, x[tr], scfg)
    save_sin(model, out / "sin.json")
    rows = []
    for name, idx in (("train", tr), ("test", te)):
        errs = hard_rescatter_errors(model, x[idx])
        rows.append([name, len(idx), edge_accuracy(model, x[idx], adj[idx]), float(np.mean(errs)),
                     format_error_e3(errs), soft_rescatter_mse(model, x[idx])])
    write_rows_csv(out / "sin_report.csv",
                   ["split", "graphs", "edge_accuracy", "rescatter_mse", "rescatter_mse_e3", "soft_rescatter_sq_l2"],
                   rows)
    log.info("stage=train_sin bce=%.6g refine_mse=%.6g test_edge_accuracy=%.6g test_rescatter_e3=\"%s\"",
             bce[-1], refine[-1] if refine else float("nan"), rows[1][2], rows[1][4])
    return model


def cmd_train_sin(args, cfg):
    from .io import load_dataset

    out = _ensure_dir(Path(args.out))
    with stage("train_sin"):
        _write_config(out, dict(cfg, dataset=str(args.dataset), scattering_dir=str(args.scattering)),
                      "train-sin")
        x, manifest = _load_scattering(args.scattering)
        dataset = load_dataset(args.dataset)
        _check_rows(x, dataset)
        _train_sin(x, dataset, cfg, out, manifest)


def _write_embedding(path: Path, z, dataset):
    from .io import write_matrix_csv

    meta = dataset.meta_array() if dataset is not None else None
    write_matrix_csv(path, z, "z", extra=None if meta is None else {"meta": meta})


def cmd_embed(args, cfg):
    from .gsae import embed, load_gsae
    from .io import load_dataset

    out = _ensure_dir(Path(args.out))
    with stage("embed"):
        _write_config(out, dict(cfg, gsae=str(args.gsae), scattering_dir=str(args.scattering)), "embed")
        model = load_gsae(args.gsae)
        x, manifest = _load_scattering(args.scattering)
        if model.manifest is not None and model.manifest != manifest:
            from .errors import ManifestMismatch

            raise ManifestMismatch("checkpoint was trained on a different scattering layout")
        dataset = load_dataset(args.dataset) if args.dataset else None
        _write_embedding(out / "embedding.csv", embed(model, x), dataset)


def _smoothness_rows(points: dict, signal, signal_name, ks, center, subsets=None):
    from .evaluation import smoothness

    rows = []
    for method, pts in points.items():
        sig = signal if subsets is None or method not in subsets else signal[subsets[method]]
        for k in ks:
            r = smoothness(pts, sig, int(k), signal_name, center=center)
            rows.append([method, signal_name, int(k), r.dirichlet, r.smoothness_index])
            log.info("stage=eval method=%s k=%d smoothness_index=%.6g", method, int(k), r.smoothness_index)
    return rows


def _baseline_points(methods, dataset, x, cfg):
    """Points for each non-learned baseline; ged-mds may use a seeded subsample."""
    import numpy as np

    from .evaluation import ged_mds_embedding, wl_embedding

    ev = cfg["eval"]
    points, subsets = {}, {}
    for m in methods:
        if m == "scattering":
            points[m] = x
        elif m == "wl":
            points[m] = wl_embedding(dataset.graphs, ev["wl_iterations"], ev["wl_dims"])
        elif m == "ged-mds":
            idx = np.arange(len(dataset))
            if len(idx) > ev["mds_max"]:
                rng = np.random.default_rng(stage_seed(cfg["seed"], "eval"))
                idx = np.sort(rng.choice(len(dataset), ev["mds_max"], replace=False))
                subsets[m] = idx
            points[m] = ged_mds_embedding([dataset.graphs[i] for i in idx], ev["mds_dims"])
    return points, subsets


def cmd_eval(args, cfg):
    from .io import load_dataset, write_rows_csv

    out = _ensure_dir(Path(args.out))
    ev = cfg["eval"]
    with stage("eval"):
        _write_config(out, dict(cfg, dataset=str(args.dataset), points=list(args.points or [])), "eval")
        dataset = load_dataset(args.dataset)
        signal, name = _signal(dataset)
        points = {}
        for spec in args.points or []:
            if "=" not in spec:
                raise UsageError(f"--points expects NAME=CSV, got {spec!r}")
            label, path = spec.split("=", 1)
            ids, pts = _embedding_points(Path(path))
            if len(ids) != len(dataset):
                from .errors import LengthMismatch

                raise LengthMismatch(f"{path} has {len(ids)} rows for {len(dataset)} graphs")
            points[label] = pts
        baseline = [m for m in ev["methods"] if m != "gsae"]
        x = None
        if "scattering" in baseline:
            if args.scattering:
                x, _ = _load_scattering(args.scattering)
            else:
                from .scattering import scatter_dataset

                x = scatter_dataset(dataset, scattering_config(cfg))
        extra, subsets = _baseline_points(baseline, dataset, x, cfg)
        points.update(extra)
        rows = _smoothness_rows(points, signal, name, ev["k"], ev["center"], subsets)
        write_rows_csv(out / "smoothness.csv", ["method", "signal", "k", "dirichlet", "smoothness_index"], rows)


def _trajectory(gsae, sin, z, start, end, steps, out: Path, tag: str):
    from .evaluation import count_increases, trajectory_edit_profile
    from .graphs import GraphDataset
    from .io import save_dataset, write_rows_csv
    from .sin import generate_trajectory

    graphs = generate_trajectory(gsae, sin, z[start], z[end], steps)
    profile = trajectory_edit_profile(graphs)
    save_dataset(GraphDataset(graphs[0].n, tuple(graphs)), out / f"trajectory{tag}.jsonl")
    write_rows_csv(out / f"profile{tag}.csv", ["t", "ged_to_final"], [[t, d] for t, d in enumerate(profile)])
    return profile, count_increases(profile)


def cmd_interpolate(args, cfg):
    from .gsae import embed, load_gsae
    from .sin import load_sin

    out = _ensure_dir(Path(args.out))
    it = cfg["interpolate"]
    if it["start"] is None or it["end"] is None:
        raise UsageError("interpolate needs --start and --end graph ids")
    with stage("interpolate"):
        _write_config(out, dict(cfg, gsae=str(args.gsae), sin=str(args.sin),
                                scattering_dir=str(args.scattering)), "interpolate")
        gsae = load_gsae(args.gsae)
        sin = load_sin(args.sin)
        x, _ = _load_scattering(args.scattering)
        for gid in (it["start"], it["end"]):
            if not 0 <= gid < len(x):
                raise UsageError(f"graph id {gid} outside [0, {len(x)})")
        z = embed(gsae, x)
        profile, inc = _trajectory(gsae, sin, z, it["start"], it["end"], it["steps"], out, "")
        log.info("stage=interpolate steps=%d increases=%d final_ged_start=%d", it["steps"], inc, profile[0])


def cmd_pca(args, cfg):
    from .evaluation import pca_project
    from .io import load_dataset, write_matrix_csv

    out = _ensure_dir(Path(args.out))
    with stage("pca"):
        _write_config(out, dict(cfg, input=str(args.input)), "pca")
        ids, pts = _embedding_points(Path(args.input))
        dims = int(cfg["pca"]["dims"])
        coords, ratio = pca_project(pts, dims)
        write_matrix_csv(out / "pca.csv", coords, "c", ids=ids)
        log.info("stage=pca dims=%d explained=%s", dims, ",".join(f"{r:.4f}" for r in ratio))


def cmd_pipeline(args, cfg):
    import numpy as np

    from .gsae import embed
    from .io import load_dataset, write_rows_csv

    run_name = args.run_name or _dt.datetime.now().strftime("run-%Y%m%d-%H%M%S")
    out = _ensure_dir(Path(args.out) / run_name)
    _write_config(out, dict(cfg, dataset=str(args.dataset)), "pipeline")
    log.info("stage=pipeline run_dir=%s", out)
    with stage("load"):
        dataset = load_dataset(args.dataset)
    with stage("scatter"):
        x, manifest = _scatter(dataset, cfg, out)
    with stage("train_gsae"):
        model, tr, te = _train_gsae(x, dataset, cfg, out, manifest)
        _energy_report(model, x, dataset, te, out)
    with stage("embed"):
        z = embed(model, x)
        _write_embedding(out / "embedding.csv", z, dataset)
    with stage("eval"):
        ev = cfg["eval"]
        signal, name = _signal(dataset)
        points = {"gsae": z} if "gsae" in ev["methods"] else {}
        extra, subsets = _baseline_points([m for m in ev["methods"] if m != "gsae"], dataset, x, cfg)
        points.update(extra)
        rows = _smoothness_rows(points, signal, name, ev["k"], ev["center"], subsets)
        write_rows_csv(out / "smoothness.csv", ["method", "signal", "k", "dirichlet", "smoothness_index"], rows)
    pl = cfg["pipeline"]
    if not pl["sin"]:
        return
    with stage("train_sin"):
        sin = _train_sin(x, dataset, cfg, out, manifest)
    if pl["trajectory_pairs"] <= 0:
        return
    with stage("interpolate"):
        q = pl["trajectory_quantile"]
        hi = np.flatnonzero(signal >= np.quantile(signal, 1 - q))
        lo = np.flatnonzero(signal <= np.quantile(signal, q))
        rng = np.random.default_rng(stage_seed(cfg["seed"], "interpolate"))
        steps = cfg["interpolate"]["steps"]
        rows = []
        for k in range(pl["trajectory_pairs"]):
            a, b = int(rng.choice(hi)), int(rng.choice(lo))
            profile, inc = _trajectory(model, sin, z, a, b, steps, out, f"_{k:03d}")
            rows.append([k, a, b, profile[0], inc, int(inc <= 1)])
        write_rows_csv(out / "trajectories.csv",
                       ["pair", "start_id", "end_id", "ged_start_to_final", "increases", "monotone_within_slack"],
                       rows)
        share = sum(r[-1] for r in rows) / len(rows)
        log.info("stage=interpolate pairs=%d monotone_share=%.4f", len(rows), share)


COMMANDS = {
    "gen-toy": cmd_gen_toy,
    "gen-folds": cmd_gen_folds,
    "ingest": cmd_ingest,
    "scatter": cmd_scatter,
    "train-gsae": cmd_train_gsae,
    "train-sin": cmd_train_sin,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "interpolate": cmd_interpolate,
    "pca": cmd_pca,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------- argparse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _flag(p, name, dest, **kw):
    if "action" not in kw:
        kw.setdefault("metavar", dest.rsplit(".", 1)[-1].upper())
    p.add_argument(name, dest=dest, default=argparse.SUPPRESS, **kw)


def _add_sections(p, sections):
    if "toy" in sections:
        _flag(p, "--n", "toy.n", type=int, help="node count (10)")
        _flag(p, "--p", "toy.p", type=float, help="initial edge probability (0.5)")
        _flag(p, "--steps", "toy.steps", type=int, help="edge flips; the dataset has steps+1 graphs (9999)")
    if "folds" in sections:
        _flag(p, "--sequence", "folds.sequence", help="RNA sequence over ACGU, length <= 30")
        _flag(p, "--max-structures", "folds.max_structures", type=int, help="subsample cap (20000)")
    if "scattering" in sections:
        _flag(p, "--j-max", "scattering.j_max", type=int, help="wavelet scales J (ceil log2 n)")
        _flag(p, "--q-max", "scattering.q_max", type=int, help="moment count Q (4)")
        _flag(p, "--orders", "scattering.orders", type=int, nargs="+", help="scattering orders (0 1 2)")
        _flag(p, "--self-loop-isolated", "scattering.self_loop_isolated", action=argparse.BooleanOptionalAction,
              help="add self-loops to isolated nodes instead of failing")
    if "gsae" in sections:
        _flag(p, "--latent-dim", "gsae.latent_dim", type=int)
        _flag(p, "--alpha", "gsae.alpha", type=float, help="regression weight; 0 trains a plain autoencoder")
        _flag(p, "--beta", "gsae.beta", type=float, help="KL weight")
        _flag(p, "--lr", "gsae.lr", type=float)
        _flag(p, "--iterations", "gsae.iterations", type=int)
        _flag(p, "--batch-size", "gsae.batch_size", type=int)
        _flag(p, "--hidden-dims", "gsae.hidden_dims", type=int, nargs=2)
        _flag(p, "--variational", "gsae.variational", action=argparse.BooleanOptionalAction)
        _flag(p, "--standardize-meta", "gsae.standardize_meta", action=argparse.BooleanOptionalAction,
              help="fit the regressor on z-scored targets")
    if "sin" in sections:
        _flag(p, "--sin-rank", "sin.rank", type=int)
        _flag(p, "--sin-threshold", "sin.threshold", type=float)
        _flag(p, "--pretrain-iterations", "sin.pretrain_iterations", type=int)
        _flag(p, "--refine-iterations", "sin.refine_iterations", type=int)
        _flag(p, "--pretrain-lr", "sin.pretrain_lr", type=float)
        _flag(p, "--refine-lr", "sin.refine_lr", type=float)
    if "eval" in sections:
        _flag(p, "--k", "eval.k", type=int, nargs="+", help="kNN sizes (5 10)")
        _flag(p, "--methods", "eval.methods", nargs="+", choices=EVAL_METHODS)
        _flag(p, "--center", "eval.center", action=argparse.BooleanOptionalAction,
              help="mean-centre the signal before computing the index")
        _flag(p, "--mds-max", "eval.mds_max", type=int, help="GED-MDS subsample size (2000)")
    if "split" in sections:
        _flag(p, "--train-fraction", "split.train_fraction", type=float)
    if "interpolate" in sections:
        _flag(p, "--start", "interpolate.start", type=int)
        _flag(p, "--end", "interpolate.end", type=int)
        _flag(p, "--trajectory-steps", "interpolate.steps", type=int)
    if "pca" in sections:
        _flag(p, "--dims", "pca.dims", type=int)
    if "pipeline" in sections:
        _flag(p, "--sin", "pipeline.sin", action=argparse.BooleanOptionalAction, help="also train the inverse network")
        _flag(p, "--trajectory-pairs", "pipeline.trajectory_pairs", type=int,
              help="high-meta to low-meta trajectories to export (needs --sin)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scatterfold", description="Scattering embeddings of graph ensembles.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub_help = {
        "gen-toy": "generate a random edge-flip trajectory",
        "gen-folds": "enumerate secondary structures of a sequence",
        "ingest": "convert a dot-bracket file to a dataset",
        "scatter": "compute scattering features",
        "train-gsae": "train the scattering autoencoder",
        "train-sin": "train the scattering inversion network",
        "embed": "embed scattering rows with a trained autoencoder",
        "eval": "smoothness of a signal over embeddings and baselines",
        "interpolate": "decode a latent trajectory between two graphs",
        "pca": "PCA coordinates of an embedding",
        "pipeline": "scatter, train, embed and evaluate in one run directory",
    }
    for name, sections in SECTIONS.items():
        p = sub.add_parser(name, help=sub_help[name])
        p.add_argument("--config", help="JSON config; explicit flags take precedence")
        _flag(p, "--seed", "seed", type=int, help="root seed (0)")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
        p.add_argument("--out", required=True, help="output file (data commands) or directory")
        _add_sections(p, sections)
        if name == "ingest":
            p.add_argument("--input", required=True, help="dot-bracket file")
        if name in ("scatter", "train-gsae", "train-sin", "eval", "pipeline"):
            p.add_argument("--dataset", required=True)
        if name in ("train-gsae", "train-sin", "embed", "interpolate"):
            p.add_argument("--scattering", required=True, help="directory written by `scatter`")
        if name == "eval":
            p.add_argument("--scattering", help="reuse features written by `scatter`")
            p.add_argument("--points", nargs="*", help="NAME=CSV embeddings to score")
        if name == "embed":
            p.add_argument("--gsae", required=True, help="checkpoint")
            p.add_argument("--dataset", help="attach meta values to the embedding CSV")
        if name == "interpolate":
            p.add_argument("--gsae", required=True)
            p.add_argument("--sin", required=True)
        if name == "pca":
            p.add_argument("--input", required=True, help="embedding or coordinate CSV")
        if name == "pipeline":
            p.add_argument("--run-name", help="run directory name (default: timestamp)")
    return parser


def _cap_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging():
    root = logging.getLogger("scatterfold")
    if not any(getattr(h, "_scatterfold", False) for h in root.handlers):
        h = _StderrHandler()
        h.setFormatter(logging.Formatter("%(message)s"))
        h._scatterfold = True
        root.addHandler(h)
    root.setLevel(logging.INFO)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    _setup_logging()
    from .errors import ScatterfoldError

    try:
        _cap_threads(args.threads)
        file_cfg = None
        if args.config:
            try:
                file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        overrides = {k: v for k, v in vars(args).items() if k == "seed" or "." in k}
        cfg = resolve_config(args.command, file_cfg, overrides)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        log.error("stage=config error=usage message=%s", json.dumps(str(exc)))
        return EXIT_USAGE
    except StageFailure as exc:
        hint = _isolated_hint(exc.cause)
        log.error("stage=%s error=%s message=%s", exc.stage, type(exc.cause).__name__,
                  json.dumps(str(exc.cause) + hint))
        return EXIT_RUNTIME
    except (ScatterfoldError, OSError) as exc:
        log.error("stage=%s error=%s message=%s", args.command, type(exc).__name__, json.dumps(str(exc)))
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: gen-data -> train-pvrnn -> indicators -> filter -> train-bc -> evaluate.

Every stage reads from and writes to one output directory and leaves a
``manifest-<stage>.json`` beside its artefacts.  Configuration is a flat
TOML file (tables become dotted keys) and every key can be overridden on
the command line as ``--table.key value``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np
import tomli
from scipy.stats import rankdata

from .dataset import generate_dataset, label_rewards, read_jsonl, training_view, write_jsonl
from .demonstrators import default_roster
from .games import make_game
from .imitation import BCConfig, bc_train, load_policy, save_policy, worst_score, write_eval_csv
from .indicators import FIELDS, compute_records, percentile_filter, read_indicator_csv, write_indicator_csv
from .numkit import pca_project
from .pvrnn import PVRNNConfig, load_model, save_model, train
from .toymodel import format_report, verify_all, write_report_csv

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out_dir": "runs/default",
    "game.name": "rps",
    "game.horizon": 100,
    "game.roster": "",  # comma-separated subset of the default roster; empty = all
    "dataset.games_per_ordered_pair": 20,
    "dataset.label_fraction": 0.05,
    "pvrnn.z_dim": 2,
    "pvrnn.l_dim": 2,
    "pvrnn.h_dim": 32,
    "pvrnn.r_dim": 32,
    "pvrnn.lr": 1e-3,
    "pvrnn.epochs": 500,
    "pvrnn.batch_size": 128,
    "pvrnn.clip_norm": 0.0,  # 0 disables clipping
    "indicators.delta": 0.0,  # 0 picks the smallest delta with enough neighbours
    "indicators.min_neighbors": 20,
    "indicators.el_steps": 500,
    "filter.field": "el",
    "filter.p": 0.25,
    "bc.lr": 1e-4,
    "bc.epochs": 500,
    "bc.minibatches": 50,
    "bc.hidden": 256,
    "eval.n_games": 500,
    "toy.n_samples": 1_000_000,
    "toy.fixture_samples": 1_000_000,
    "plot.label": "ri",
}

STAGES = ("gen-data", "train-pvrnn", "indicators", "filter", "train-bc", "evaluate", "verify-toy", "plot")

ARTIFACTS = {
    "dataset_full.jsonl": "gen-data",
    "dataset.jsonl": "gen-data",
    "pvrnn.ckpt": "train-pvrnn",
    "indicators.csv": "indicators",
    "kept_ids.txt": "filter",
    "bc_filtered.ckpt": "train-bc",
    "bc_unfiltered.ckpt": "train-bc",
}


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


# -- configuration ---------------------------------------------------------------------

def _flatten(table: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    kind = type(default)
    try:
        if kind is bool:
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot read {value!r} as {kind.__name__}") from None


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = dict(DEFAULTS)
    layers = []
    if path is not None:
        with open(path, "rb") as fh:
            layers.append(_flatten(tomli.load(fh)))
    layers.append(overrides or {})
    for layer in layers:
        for k, v in layer.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            cfg[k] = _coerce(k, v)
    validate(cfg)
    return cfg


def validate(cfg: dict[str, Any]) -> None:
    if cfg["game.name"] not in ("rps", "connect4", "c4"):
        raise ConfigError(f"config key 'game.name': unknown game {cfg['game.name']!r}")
    if not 0.0 <= cfg["filter.p"] <= 1.0:
        raise ConfigError("config key 'filter.p' must lie in [0, 1]")
    if cfg["filter.field"] not in FIELDS:
        raise ConfigError(f"config key 'filter.field': choose from {sorted(FIELDS)}")
    if not 0.0 < cfg["dataset.label_fraction"] <= 1.0:
        raise ConfigError("config key 'dataset.label_fraction' must lie in (0, 1]")
    if cfg["plot.label"] not in PLOT_LABELS:
        raise ConfigError(f"config key 'plot.label': choose from {PLOT_LABELS}")
    for key in ("dataset.games_per_ordered_pair", "game.horizon", "eval.n_games"):
        if cfg[key] < 1:
            raise ConfigError(f"config key {key!r} must be positive")
    roster(cfg)
    try:
        pvrnn_config(cfg)
        bc_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def roster(cfg):
    full = default_roster(cfg["game.name"])
    wanted = [s.strip() for s in cfg["game.roster"].split(",") if s.strip()]
    if not wanted:
        return full
    names = {p.name: p for p in full}
    unknown = [w for w in wanted if w not in names]
    if unknown:
        raise ConfigError(f"config key 'game.roster': unknown demonstrator {unknown[0]!r}; have {sorted(names)}")
    return [names[w] for w in wanted]


def pvrnn_config(cfg) -> PVRNNConfig:
    clip = cfg["pvrnn.clip_norm"]
    return PVRNNConfig(
        z_dim=cfg["pvrnn.z_dim"], l_dim=cfg["pvrnn.l_dim"], h_dim=cfg["pvrnn.h_dim"], r_dim=cfg["pvrnn.r_dim"],
        lr=cfg["pvrnn.lr"], epochs=cfg["pvrnn.epochs"], batch_size=cfg["pvrnn.batch_size"],
        seed=cfg["seed"], clip_norm=clip if clip > 0 else None,
    )


def bc_config(cfg) -> BCConfig:
    return BCConfig(lr=cfg["bc.lr"], epochs=cfg["bc.epochs"], minibatches=cfg["bc.minibatches"],
                    hidden=cfg["bc.hidden"], seed=cfg["seed"])


def config_hash(cfg: dict[str, Any]) -> str:
    # out_dir is where results go, not what they are
    body = {k: v for k, v in cfg.items() if k != "out_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


# -- artefacts and manifests -----------------------------------------------------------

def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Stage:
    def __init__(self, name: str, cfg: dict[str, Any]):
        self.name = name
        self.cfg = cfg
        self.out = Path(cfg["out_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def need(self, artifact: str) -> Path:
        path = self.out / artifact
        if not path.exists():
            raise MissingArtifactError(
                f"{self.name}: {path} not found; run `stril {ARTIFACTS[artifact]}` first"
            )
        self.inputs[artifact] = file_hash(path)
        return path

    def path(self, artifact: str) -> Path:
        self.outputs.append(artifact)
        return self.out / artifact

    def finish(self) -> Path:
        manifest = {
            "stage": self.name,
            "seed": self.cfg["seed"],
            "config_hash": config_hash(self.cfg),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {a: file_hash(self.out / a) for a in sorted(self.outputs)},
        }
        path = self.out / f"manifest-{self.name}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


# -- stages ----------------------------------------------------------------------------

def _game(cfg):
    return make_game(cfg["game.name"], cfg["game.horizon"])


def stage_gen_data(cfg, log):
    st = Stage("gen-data", cfg)
    full = generate_dataset(roster(cfg), _game(cfg), cfg["dataset.games_per_ordered_pair"], seed=cfg["seed"])
    labeled = label_rewards(full, cfg["dataset.label_fraction"], seed=cfg["seed"])
    write_jsonl(full, st.path("dataset_full.jsonl"))
    write_jsonl(labeled, st.path("dataset.jsonl"))
    log(f"gen-data: {len(full)} trajectories, {len(labeled.labeled_ids)} reward-labelled")
    return st.finish()


def stage_train_pvrnn(cfg, log):
    st = Stage("train-pvrnn", cfg)
    ds = read_jsonl(st.need("dataset.jsonl"))
    every = max(1, cfg["pvrnn.epochs"] // 10)

    def progress(epoch, loss):
        if epoch % every == 0 or epoch == cfg["pvrnn.epochs"] - 1:
            log(f"train-pvrnn: epoch {epoch} loss {loss:.4f}")

    res = train(training_view(ds), pvrnn_config(cfg), ds.spec.obs_dim, ds.spec.action_count, log=progress)
    save_model(st.path("pvrnn.ckpt"), res.model, res.reps)
    return st.finish()


def stage_indicators(cfg, log):
    st = Stage("indicators", cfg)
    ds = read_jsonl(st.need("dataset.jsonl"))
    model, reps = load_model(st.need("pvrnn.ckpt"))
    table = np.array([reps[t.id] for t in ds.trajectories])
    delta = cfg["indicators.delta"] or None
    records, used, est = compute_records(
        model, ds.trajectories, table, seed=cfg["seed"], delta=delta,
        min_neighbors=cfg["indicators.min_neighbors"], el_steps=cfg["indicators.el_steps"],
    )
    write_indicator_csv(st.path("indicators.csv"), records)
    log(f"indicators: delta={used:.6g}; EL regressor {'trained' if est else 'skipped (too few losing labels)'}")
    return st.finish()


def stage_filter(cfg, log):
    st = Stage("filter", cfg)
    records = read_indicator_csv(st.need("indicators.csv"))
    kept = percentile_filter(records, cfg["filter.field"], cfg["filter.p"])
    # keep file order so the output does not depend on set iteration
    ordered = [r.traj_id for r in records if r.traj_id in kept]
    st.path("kept_ids.txt").write_text("".join(f"{i}\n" for i in ordered))
    log(f"filter: kept {len(ordered)} of {len(records)} by {cfg['filter.field']} at p={cfg['filter.p']}")
    return st.finish()


def stage_train_bc(cfg, log):
    st = Stage("train-bc", cfg)
    ds = read_jsonl(st.need("dataset.jsonl"))
    kept = st.need("kept_ids.txt").read_text().split()
    bcc = bc_config(cfg)
    filt = bc_train(ds, kept, bcc, name=f"BC-{cfg['filter.field']}-p{cfg['filter.p']:g}")
    save_policy(st.path("bc_filtered.ckpt"), filt)
    raw = bc_train(ds, [t.id for t in ds.trajectories], bcc, name="BC-unfiltered")
    save_policy(st.path("bc_unfiltered.ckpt"), raw)
    log(f"train-bc: final loss filtered {filt.loss_history[-1]:.4f}, unfiltered {raw.loss_history[-1]:.4f}")
    return st.finish()


def stage_evaluate(cfg, log):
    st = Stage("evaluate", cfg)
    game = _game(cfg)
    reports = []
    for artifact, name in (("bc_filtered.ckpt", "filtered"), ("bc_unfiltered.ckpt", "unfiltered")):
        pol = load_policy(st.need(artifact), game.spec.name, name=name)
        reports.append(worst_score(pol, roster(cfg), game, cfg["eval.n_games"], cfg["seed"]))
    write_eval_csv(st.path("eval.csv"), reports)
    for rep in reports:
        log(rep.table())
    return st.finish()


def stage_verify_toy(cfg, log):
    st = Stage("verify-toy", cfg)
    rows = verify_all(seed=cfg["seed"], n_samples=cfg["toy.n_samples"], fixture_samples=cfg["toy.fixture_samples"])
    write_report_csv(st.path("toy_report.csv"), rows)
    log(format_report(rows))
    return st.finish()


def stage_plot(cfg, log):
    st = Stage("plot", cfg)
    ds = read_jsonl(st.need("dataset_full.jsonl"))
    _, reps = load_model(st.need("pvrnn.ckpt"))
    records = {r.traj_id: r for r in read_indicator_csv(st.need("indicators.csv"))}
    label = cfg["plot.label"]
    ids = [t.id for t in ds.trajectories]
    if label == "demo_id":
        values = [t.meta.get("demo_id", "") for t in ds.trajectories]
    elif label == "reward":
        # the plot may look at every reward: it is a diagnostic, not a training input
        values = [t.reward for t in ds.trajectories]
    else:
        values = [getattr(records[i], FIELDS[label]) for i in ids]
    table = np.array([reps[i] for i in ids])
    stem = f"reps_{label}"
    plot_representations(ids, table, values, label, st.path(f"{stem}.svg"), st.path(f"{stem}.csv"))
    log(f"plot: wrote {stem}.svg and {stem}.csv ({len(ids)} points)")
    return st.finish()


RUNNERS: dict[str, Callable] = {
    "gen-data": stage_gen_data,
    "train-pvrnn": stage_train_pvrnn,
    "indicators": stage_indicators,
    "filter": stage_filter,
    "train-bc": stage_train_bc,
    "evaluate": stage_evaluate,
    "verify-toy": stage_verify_toy,
    "plot": stage_plot,
}

PIPELINE = ("gen-data", "train-pvrnn", "indicators", "filter", "train-bc", "evaluate")


# -- plotting --------------------------------------------------------------------------

PLOT_LABELS = ("demo_id", "ri", "el", "reward")

_RAMP_ANCHORS = np.array(
    [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=np.float64
)
_CATEGORICAL = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def color_ramp(steps: int = 256) -> list[str]:
    """Monotone dark-to-light ramp interpolated through five anchor colours."""
    t = np.linspace(0.0, 1.0, steps) * (len(_RAMP_ANCHORS) - 1)
    lo = np.minimum(t.astype(int), len(_RAMP_ANCHORS) - 2)
    frac = (t - lo)[:, None]
    rgb = np.rint(_RAMP_ANCHORS[lo] * (1 - frac) + _RAMP_ANCHORS[lo + 1] * frac).astype(int)
    return [f"#{r:02x}{g:02x}{b:02x}" for r, g, b in rgb]


def midrank_percentiles(values) -> np.ndarray:
    """(midrank - 1/2) / n, so ties share a percentile and a constant column maps to 0.5."""
    v = np.asarray(values, dtype=np.float64)
    return (rankdata(v, method="average") - 0.5) / len(v)


def plot_representations(ids, table, values, label: str, svg_path, csv_path, size: int = 480) -> np.ndarray:
    """PCA scatter of representations coloured by label percentile (categorical for demo_id).

    Missing values (unlabelled rewards, absent EL estimates) are drawn grey
    and carry an empty percentile in the CSV.  Returns the 2-D coordinates.
    """
    if label not in PLOT_LABELS:
        raise KeyError(f"unknown label field {label!r}; choose from {PLOT_LABELS}")
    table = np.atleast_2d(np.asarray(table, dtype=np.float64))
    if len(table) < 2:
        raise ValueError("plotting needs at least two representations")
    xy = pca_project(table, min(2, table.shape[1])).projected
    if xy.shape[1] == 1:
        xy = np.hstack([xy, np.zeros((len(xy), 1))])

    pct: list[float | None] = [None] * len(ids)
    if label == "demo_id":
        cats = sorted(set(values))
        colors = [_CATEGORICAL[cats.index(v) % len(_CATEGORICAL)] for v in values]
    else:
        present = [k for k, v in enumerate(values) if v is not None]
        ramp = color_ramp()
        colors = ["#bbbbbb"] * len(ids)
        if present:
            p = midrank_percentiles([values[k] for k in present])
            for k, q in zip(present, p):
                pct[k] = float(q)
                colors[k] = ramp[min(int(q * 256), 255)]

    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    margin = 20
    pix = margin + (xy - lo) / span * (size - 2 * margin)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{margin}" y="14" font-size="12" font-family="sans-serif">PCA of representations, colour: {label}</text>',
    ]
    for (x, y), c in zip(pix, colors):
        lines.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="2.5" fill="{c}" fill-opacity="0.8"/>')
    lines.append("</svg>")
    Path(svg_path).write_text("\n".join(lines) + "\n")

    out = ["traj_id,x,y,label,percentile"]
    for k, tid in enumerate(ids):
        v = values[k]
        vs = "" if v is None else (v if isinstance(v, str) else repr(float(v)))
        ps = "" if pct[k] is None else repr(pct[k])
        out.append(f"{tid},{float(xy[k, 0])!r},{float(xy[k, 1])!r},{vs},{ps}")
    Path(csv_path).write_text("\n".join(out) + "\n")
    return xy


# -- entry point -----------------------------------------------------------------------

def parse_overrides(extra: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    k = 0
    while k < len(extra):
        tok = extra[k]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if k + 1 >= len(extra):
                raise ConfigError(f"flag --{key} needs a value")
            value = extra[k + 1]
            k += 1
        key = key.replace("-", "_") if key.replace("-", "_") in DEFAULTS else key
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value
        k += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stril",
        description="Strategy-representation filtering for imitation learning.",
        epilog="Any config key can be given as a flag, e.g. --pvrnn.epochs 50 --filter.field ri.",
    )
    ap.add_argument("command", choices=[*STAGES, "pipeline"])
    ap.add_argument("-c", "--config", help="TOML config file")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def run(command: str, cfg: dict[str, Any], log: Callable[[str], None] = print) -> list[Path]:
    stages = PIPELINE if command == "pipeline" else (command,)
    return [RUNNERS[s](cfg, log) for s in stages]


def main(argv: list[str] | None = None) -> int:
    args, extra = build_parser().parse_known_args(argv)
    log = (lambda _msg: None) if args.quiet else (lambda msg: print(msg, flush=True))
    try:
        cfg = load_config(args.config, parse_overrides(extra))
        run(args.command, cfg, log)
    except (ConfigError, MissingArtifactError) as exc:
        print(f"stril: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

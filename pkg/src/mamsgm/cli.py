"""Experiment orchestration: collect, train, evaluate, plot, verify.

A single JSON experiment config drives every stage; its content hash is
stamped into each artifact so results stay traceable to the exact
settings that produced them.  All stages are deterministic given
``(config, seed)``: rerunning a command rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import executor, io, models, plots, training
from .env import SCENARIO_BUILDERS, Box, Scenario
from .env import collect_dataset as _collect
from .planner import PlanConfig, RiskConfig, saddle_battery, verify_saddle
from .training import TrainConfig

__all__ = [
    "ExperimentConfig",
    "load_config",
    "cmd_collect",
    "cmd_train",
    "cmd_evaluate",
    "cmd_plot",
    "cmd_verify",
    "main",
    "VARIANTS",
    "PRESETS",
    "START_REGIONS",
]

VARIANTS = (
    "tsm-conditional",
    "tsm-disentangled-mi",
    "tsm-disentangled-penalty",
    "single-step",
    "inverse-dynamics",
)

# Scale presets: the full published setup versus one that finishes on a
# workstation (fewer trajectories and epochs, narrower convolutions).
PRESETS = {
    "paper": {"n_traj": 30000, "epochs": 2000, "channels": 32},
    "desk": {"n_traj": 3000, "epochs": 200, "channels": 16},
}

# Start configurations relative to the dividing wall.
START_REGIONS = {
    "random": (None, None),
    "same-side": (Box(0.2, 1.4, -1.4, 1.4), Box(0.2, 1.4, -1.4, 1.4)),
    "opposite-side": (Box(-1.4, -0.2, -1.4, 1.4), Box(0.2, 1.4, -1.4, 1.4)),
}

DEFAULT_EVALUATION = (
    {"method": "tsm-conditional", "opponent": "exploration", "start": "same-side", "episodes": 20},
    {"method": "tsm-conditional", "opponent": "exploration", "start": "opposite-side", "episodes": 20},
    {"method": "single-step", "opponent": "exploration", "start": "same-side", "episodes": 20},
    {"method": "single-step", "opponent": "exploration", "start": "opposite-side", "episodes": 20},
    {"method": "random", "opponent": "exploration", "start": "same-side", "episodes": 20},
    {"method": "random", "opponent": "exploration", "start": "opposite-side", "episodes": 20},
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, JSON-serializable and hashable."""

    scenario: str = "predator_prey"  # builder name or a scenario file path
    out_dir: str = "out"
    seed: int = 0
    preset: str = "desk"
    n_traj: int = 3000
    channels: int = 16
    latent: int = 8
    disentangled_latent: int = 12
    mi_weight: float = 0.1
    penalty_weight: float = 0.01
    threads: int = 1
    plots_per_cell: int = 3
    freeze_threshold: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)
    plan: PlanConfig = field(default_factory=lambda: PlanConfig(segments=4))
    risk: RiskConfig = field(default_factory=RiskConfig)
    evaluation: tuple = DEFAULT_EVALUATION

    def resolve_scenario(self) -> Scenario:
        if self.scenario in SCENARIO_BUILDERS:
            return SCENARIO_BUILDERS[self.scenario]()
        return io.load_scenario(self.scenario)

    def to_mapping(self) -> dict:
        m = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("train", "plan", "risk"):
                v = {sf.name: getattr(v, sf.name) for sf in fields(v)}
            elif f.name == "evaluation":
                v = list(v)
            m[f.name] = v
        return m

    @property
    def hash(self) -> str:
        return io.config_hash(self.to_mapping())


def _merge_block(cls, base, raw: dict, label: str):
    known = {f.name for f in fields(cls)}
    bad = set(raw) - known
    if bad:
        raise ValueError(f"unknown {label} keys: {sorted(bad)}")
    return replace(base, **raw)


def load_config(path=None, preset: str | None = None, **overrides) -> ExperimentConfig:
    """Defaults, then the preset block, then file keys, then overrides."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    name = preset or raw.get("preset", ExperimentConfig.preset)
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    p = PRESETS[name]
    cfg = ExperimentConfig(
        preset=name, n_traj=p["n_traj"], channels=p["channels"], train=TrainConfig(epochs=p["epochs"])
    )

    cfg = _apply_layer(cfg, raw)
    return _apply_layer(cfg, overrides)


def _apply_layer(cfg: "ExperimentConfig", raw: dict) -> "ExperimentConfig":
    """One override layer: plain fields replace, nested blocks merge."""
    known = {f.name for f in fields(ExperimentConfig)}
    bad = set(raw) - known
    if bad:
        raise ValueError(f"unknown config keys: {sorted(bad)}")
    plain = {k: v for k, v in raw.items() if k not in ("train", "plan", "risk", "evaluation", "preset")}
    cfg = replace(cfg, **plain)
    for key, cls in (("train", TrainConfig), ("plan", PlanConfig), ("risk", RiskConfig)):
        if key in raw:
            block = raw[key]
            if isinstance(block, dict):
                block = _merge_block(cls, getattr(cfg, key), block, key)
            cfg = replace(cfg, **{key: block})
    if "evaluation" in raw:
        cfg = replace(cfg, evaluation=tuple(raw["evaluation"]))
    return cfg


# ---------------------------------------------------------------------------
# artifact paths and stamps
# ---------------------------------------------------------------------------


def _out(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_hash(sc: Scenario) -> str:
    return io.config_hash({"scenario": io.format_scenario(sc)})


def _write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# collect
# ---------------------------------------------------------------------------


def cmd_collect(cfg: ExperimentConfig) -> Path:
    sc = cfg.resolve_scenario()
    out = _out(cfg)
    ds = _collect(sc, cfg.n_traj, cfg.seed, threads=cfg.threads)
    path = out / "dataset.bin"
    io.write_dataset(path, ds)
    _write_json(
        out / "dataset.json",
        {
            "scenario": sc.name,
            "scenario_hash": _scenario_hash(sc),
            "n_trajectories": len(ds),
            "episode_length": sc.episode_length,
            "segment_length": sc.segment_length,
            "seed": cfg.seed,
            "preset": cfg.preset,
            "dataset_sha256": _file_sha256(path),
            "config_hash": cfg.hash,
        },
    )
    return path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_dataset(cfg: ExperimentConfig):
    sc = cfg.resolve_scenario()
    ds = io.read_dataset(_out(cfg) / "dataset.bin")
    if io.format_scenario(ds.scenario) != io.format_scenario(sc):
        raise ValueError("dataset was collected for a different scenario than the config names")
    return sc, ds


def _write_report(out: Path, name: str, report, cfg) -> Path:
    path = out / f"{name}_train.csv"
    with open(path, "w") as fh:
        fh.write(f"# config={cfg.hash}\n")
        fh.write(report.csv())
    return path


def cmd_train(cfg: ExperimentConfig, variant: str) -> Path:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; pick one of {VARIANTS}")
    sc, ds = _load_dataset(cfg)
    out = _out(cfg)
    shash = _scenario_hash(sc)
    H = sc.segment_length
    tc = replace(cfg.train, seed=cfg.seed, mi_weight=0.0, penalty_weight=0.0)
    summary = {"variant": variant, "config_hash": cfg.hash, "scenario_hash": shash, "epochs": tc.epochs}

    if variant == "tsm-conditional":
        mx = models.make_segment_model("conditional-x", cfg.channels, cfg.latent, H, seed=cfg.seed)
        my = models.make_segment_model("conditional-y", cfg.channels, cfg.latent, H, seed=cfg.seed + 1)
        rep_x = training.train_segment_model(mx, ds, tc)
        rep_y = training.train_segment_model(my, ds, tc)
        _write_report(out, f"{variant}_x", rep_x, cfg)
        _write_report(out, f"{variant}_y", rep_y, cfg)
        hyper = {"kind": "pair", "x": models.model_hyper(mx), "y": models.model_hyper(my), "scenario": shash}
        tensors = {f"x.{k}": v.data for k, v in mx.params.items()}
        tensors.update({f"y.{k}": v.data for k, v in my.params.items()})
        if rep_x.rows:
            summary["heldout"] = {"x": rep_x.final.heldout, "y": rep_y.final.heldout}
    elif variant in ("tsm-disentangled-mi", "tsm-disentangled-penalty"):
        model = models.make_segment_model("disentangled", cfg.channels, cfg.disentangled_latent, H, seed=cfg.seed)
        info_pair = None
        if variant.endswith("mi"):
            tc = replace(tc, mi_weight=cfg.mi_weight)
            b = cfg.disentangled_latent // 3
            info_pair = (
                models.make_info_encoder(cfg.channels, b, H, seed=cfg.seed + 2),
                models.make_info_encoder(cfg.channels, b, H, seed=cfg.seed + 3),
            )
        else:
            tc = replace(tc, penalty_weight=cfg.penalty_weight)
        report = training.train_segment_model(model, ds, tc, info_pair=info_pair)
        _write_report(out, variant, report, cfg)
        hyper = dict(models.model_hyper(model), scenario=shash)
        tensors = {k: v.data for k, v in model.params.items()}
        if report.rows:
            summary["heldout"] = report.final.heldout
    else:
        kind = "single-step" if variant == "single-step" else "inverse"
        model = models.make_single_step_model(cfg.seed) if kind == "single-step" else models.make_inverse_model(cfg.seed)
        report = training.train_transition_model(model, ds, tc, kind=kind)
        _write_report(out, variant, report, cfg)
        hyper = dict(models.model_hyper(model), scenario=shash)
        tensors = {k: v.data for k, v in model.params.items()}
        if report.rows:
            summary["heldout"] = report.final.heldout
        if kind == "single-step":
            summary["region_mse"] = _region_split(model, ds, tc)

    path = out / f"{variant}.ckpt"
    io.save_checkpoint(path, variant, hyper, tensors, config_hash=cfg.hash)
    _write_json(out / f"{variant}_train.json", summary)
    return path


def _region_split(model, ds, tc) -> dict:
    """Held-out one-step MSE near obstacles versus in free space."""
    table = training.transitions(ds)
    near = training.transition_contact_mask(ds)
    n_held = max(1, int(round(tc.heldout_fraction * len(ds)))) if tc.heldout_fraction > 0 else 0
    held = table.traj_index >= (len(ds) - n_held) if n_held else np.ones(len(table), dtype=bool)
    pred = models.mlp_forward(model, training.Tensor(table.forward_in[held])).data
    err = np.mean((pred - table.forward_target[held]) ** 2, axis=1)
    m = near[held]
    return {
        "heldout_rows": int(held.sum()),
        "wall_rows": int(m.sum()),
        "wall_mse": float(err[m].mean()) if m.any() else float("nan"),
        "free_mse": float(err[~m].mean()) if (~m).any() else float("nan"),
    }


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _load_strategy(out: Path, method: str, shash: str):
    if method == "random":
        return executor.RandomStrategy()
    path = out / f"{method}.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint for method {method!r}; run train --variant {method}")
    ck = io.load_checkpoint(path)
    if ck.hyper.get("scenario") != shash:
        raise ValueError(f"checkpoint {method!r} was trained on a different scenario")
    if method == "tsm-conditional":
        mx = models.model_from_checkpoint(ck.hyper["x"], ck.tensors, prefix="x.")
        my = models.model_from_checkpoint(ck.hyper["y"], ck.tensors, prefix="y.")
        return executor.SegmentStrategy(mx, my, name=method)
    if method.startswith("tsm-disentangled"):
        return executor.DisentangledStrategy(models.model_from_checkpoint(ck.hyper, ck.tensors), name=method)
    if method == "single-step":
        return executor.SingleStepStrategy(models.model_from_checkpoint(ck.hyper, ck.tensors), name=method)
    raise ValueError(f"unknown method {method!r}")


def _load_inverse(out: Path, shash: str):
    path = out / "inverse-dynamics.ckpt"
    if not path.exists():
        raise FileNotFoundError("tracking needs inverse-dynamics.ckpt; run train --variant inverse-dynamics")
    ck = io.load_checkpoint(path)
    if ck.hyper.get("scenario") != shash:
        raise ValueError("inverse model was trained on a different scenario")
    return models.model_from_checkpoint(ck.hyper, ck.tensors)


def _episode_seed(base: int, cell: int, j: int) -> int:
    return int(np.random.SeedSequence((base, 20, cell, j)).generate_state(1)[0])


def _cell_tag(ci: int, cell: dict, risk: RiskConfig) -> str:
    return f"{ci:02d}-{cell['method']}-{cell.get('start', 'random')}-{cell.get('opponent', 'exploration')}-{risk.direction}"


def cmd_evaluate(cfg: ExperimentConfig) -> Path:
    if not cfg.evaluation:
        raise ValueError("config has an empty evaluation matrix")
    sc = cfg.resolve_scenario()
    shash = _scenario_hash(sc)
    out = _out(cfg)
    (out / "episodes").mkdir(exist_ok=True)
    need_tracking = any(c["method"] != "random" for c in cfg.evaluation)
    inverse = _load_inverse(out, shash) if need_tracking else None

    rows = []
    for ci, cell in enumerate(cfg.evaluation):
        method = cell["method"]
        start = cell.get("start", "random")
        opponent = cell.get("opponent", "exploration")
        episodes = int(cell.get("episodes", 20))
        risk = RiskConfig(**cell["risk"]) if "risk" in cell else cfg.risk
        if start not in START_REGIONS:
            raise ValueError(f"unknown start configuration {start!r}")
        strategy = _load_strategy(out, method, shash)
        x_region, y_region = START_REGIONS[start]
        seeds = [_episode_seed(cfg.seed, ci, j) for j in range(episodes)]
        records = executor.run_episodes(
            sc, strategy, inverse, risk, cfg.plan, opponent, seeds,
            threads=cfg.threads, x_region=x_region, y_region=y_region,
        )
        executor.save_episodes(out / "episodes" / _cell_tag(ci, cell, risk), sc, records, config_hash=cfg.hash)
        costs = np.array([r.mean_cost for r in records])
        rows.append(
            (method, start, opponent, risk.direction, risk.alpha, episodes,
             float(costs.mean()), float(costs.std(ddof=1)) if episodes > 1 else 0.0, seeds[0])
        )

    path = out / "results.csv"
    with open(path, "w") as fh:
        fh.write(f"# config={cfg.hash}\n")
        fh.write("method,start,opponent,direction,alpha,episodes,mean_cost,std_cost,first_seed\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return path


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def cmd_plot(cfg: ExperimentConfig) -> list:
    out = _out(cfg)
    cells = sorted((out / "episodes").glob("*.json")) if (out / "episodes").is_dir() else []
    if not cells:
        raise FileNotFoundError("no episode records to plot; run evaluate first")
    plot_dir = out / "plots"
    plot_dir.mkdir(exist_ok=True)
    written = []
    for cell_path in cells:
        with open(cell_path) as fh:
            summary = json.load(fh)
        ds = io.read_dataset(cell_path.with_suffix(".bin"))
        sc = ds.scenario
        for ep, traj in zip(summary["episodes"][: cfg.plots_per_cell], ds.trajectories):
            planned = [None if p is None else np.asarray(p) for p in ep.get("planned", [])]
            record = SimpleNamespace(executed=traj, planned=planned)
            svg = plots.render(sc, plots.episode_traces(record, sc))
            svg = f"<!-- config={summary['config_hash']} -->\n" + svg
            path = plot_dir / f"{cell_path.stem}-{ep['seed']}.svg"
            plots.save_svg(path, svg)
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _freeze_ratios(model, pasts: np.ndarray, seed: int) -> dict:
    """Geometric-mean frozen/resampled variance ratio per agent block."""
    logs = {"x": [], "y": []}
    for i, past in enumerate(pasts):
        var_x, var_y = models.freeze_probe(model, past, "x", n_samples=64, seed=seed + i)
        logs["x"].append(math.log(max(var_x, 1e-300) / max(var_y, 1e-300)))
        var_x, var_y = models.freeze_probe(model, past, "y", n_samples=64, seed=seed + i)
        logs["y"].append(math.log(max(var_y, 1e-300) / max(var_x, 1e-300)))
    return {k: float(np.exp(np.mean(v))) for k, v in logs.items()}


def cmd_verify(cfg: ExperimentConfig, variant: str = "tsm-disentangled-mi") -> Path:
    out = _out(cfg)
    reports = [verify_saddle(g) for g in saddle_battery(10, seed=cfg.seed)]
    entangled_game = replace(saddle_battery(1, seed=cfg.seed + 1)[0], E=2.5 * np.eye(3))
    entangled = verify_saddle(entangled_game, max_iterations=3000)
    saddle = {
        "games": len(reports),
        "max_grad_norm": float(max(max(r.grad_u_norm, r.grad_w_norm) for r in reports)),
        "max_mapped_error": float(max(r.mapped_error for r in reports)),
        "all_converged": all(bool(r.converged) for r in reports),
        "all_hessian_ok": all(bool(r.hessian_ok) for r in reports),
    }
    saddle["pass"] = bool(
        saddle["all_converged"] and saddle["all_hessian_ok"] and saddle["max_grad_norm"] < 1e-5
    )

    ck_path = out / f"{variant}.ckpt"
    if not ck_path.exists():
        raise FileNotFoundError(f"freeze probe needs {ck_path.name}; run train --variant {variant}")
    ck = io.load_checkpoint(ck_path)
    model = models.model_from_checkpoint(ck.hyper, ck.tensors)
    control = models.make_segment_model(
        "disentangled", ck.hyper["channels"], ck.hyper["latent"], ck.hyper["segment_length"], seed=cfg.seed + 7
    )
    _, ds = _load_dataset(cfg)
    pairs = training.assemble_pairs(ds)
    dec, _, _ = training.joint_inputs(pairs)
    pick = np.linspace(0, len(dec) - 1, 5).astype(int)
    trained = _freeze_ratios(model, dec[pick], seed=cfg.seed)
    untrained = _freeze_ratios(control, dec[pick], seed=cfg.seed)
    freeze = {
        "variant": variant,
        "trained": trained,
        "untrained": untrained,
        "threshold": cfg.freeze_threshold,
        "pass": bool(max(trained.values()) < cfg.freeze_threshold),
    }

    path = out / "verify.json"
    _write_json(
        path,
        {
            "config_hash": cfg.hash,
            "saddle": saddle,
            "entangled": {
                "hypothesis_violated": bool(entangled.hypothesis_violated),
                "converged": bool(entangled.converged),
                "pass": bool(entangled.hypothesis_violated and not entangled.converged),
            },
            "freeze": freeze,
        },
    )
    return path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mamsgm", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--preset", choices=sorted(PRESETS), help="scale preset")
    common.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="run exploration episodes into a dataset")
    p_train = sub.add_parser("train", parents=[common], help="fit one model variant")
    p_train.add_argument("--variant", required=True, choices=VARIANTS)
    sub.add_parser("evaluate", parents=[common], help="run the evaluation matrix")
    sub.add_parser("plot", parents=[common], help="render episode SVGs")
    p_verify = sub.add_parser("verify", parents=[common], help="saddle battery and freeze probe")
    p_verify.add_argument("--variant", default="tsm-disentangled-mi", choices=VARIANTS)
    args = parser.parse_args(argv)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    threads = os.environ.get("MAMSGM_THREADS")
    if threads:
        overrides["threads"] = int(threads)
    cfg = load_config(args.config, preset=args.preset, **overrides)

    if args.command == "collect":
        print(cmd_collect(cfg))
    elif args.command == "train":
        print(cmd_train(cfg, args.variant))
    elif args.command == "evaluate":
        print(cmd_evaluate(cfg))
    elif args.command == "plot":
        for path in cmd_plot(cfg):
            print(path)
    elif args.command == "verify":
        print(cmd_verify(cfg, args.variant))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""The orchestrated pipeline end to end at toy scale, in a temp dir.

collect -> train -> evaluate -> plot -> verify, exactly what
``python -m mamsgm <subcommand>`` runs, called as plain functions.
Artifacts land in a temporary directory that is printed, not deleted,
so the manifests, checkpoints, results table, and SVGs can be
inspected afterwards.
"""

import pathlib
import tempfile

from mamsgm import cli

out = pathlib.Path(tempfile.mkdtemp(prefix="mamsgm-demo-"))
cfg = cli.load_config(
    out_dir=str(out),
    seed=5,
    n_traj=60,
    channels=8,
    latent=4,
    disentangled_latent=6,
    train={"epochs": 4, "batch_size": 128},
    plan={"restarts": 2, "samples": 4, "segments": 2, "iterations": 5},
    evaluation=[
        {"method": "tsm-conditional", "start": "random", "opponent": "exploration", "episodes": 2},
        {"method": "random", "start": "random", "opponent": "exploration", "episodes": 2},
    ],
)

print("collect:", cli.cmd_collect(cfg))
for variant in ("tsm-conditional", "tsm-disentangled-mi", "inverse-dynamics"):
    print("train:  ", cli.cmd_train(cfg, variant))
print("evaluate:", cli.cmd_evaluate(cfg))
print("plot:    ", cli.cmd_plot(cfg))
print("verify:  ", cli.cmd_verify(cfg))

print(f"\nartifacts in {out}:")
for p in sorted(out.rglob("*")):
    if p.is_file():
        print(f"  {p.relative_to(out)}  ({p.stat().st_size} bytes)")

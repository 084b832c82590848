"""Disentangled joint model: one latent third per agent, one for noise.

A joint CVAE over both agents would happily mix who-does-what across
its whole latent vector.  Training with the mutual-information bonus
ties each agent's future to its own block, which the freeze probe makes
visible: freeze a block and the matching agent's predictions stop
varying while the other agent's keep their spread.
"""

import numpy as np

from mamsgm import env, models, training

scenario = env.SCENARIO_BUILDERS["predator_prey"]()
dataset = env.collect_dataset(scenario, 600, seed=31, threads=4)

LATENT = 12  # split into thirds: z_x | z_y | noise
block = LATENT // 3
model = models.make_segment_model("disentangled", 16, LATENT, scenario.segment_length, seed=31)
info = (models.make_info_encoder(16, block, scenario.segment_length, seed=32),
        models.make_info_encoder(16, block, scenario.segment_length, seed=33))
report = training.train_segment_model(
    model, dataset,
    training.TrainConfig(epochs=60, seed=31, mi_weight=0.1),
    info_pair=info,
)
print(f"trained, heldout mse {report.final.heldout:.4f}")

pairs = training.assemble_pairs(dataset)
dec, _, _ = training.joint_inputs(pairs)
past = dec[len(dec) // 2]

control = models.make_segment_model("disentangled", 16, LATENT, scenario.segment_length, seed=99)
print(f"\n{'model':10s} {'frozen':>7s} {'var x':>9s} {'var y':>9s}   ratio")
for name, m in (("trained", model), ("untrained", control)):
    for frozen in ("x", "y"):
        var_x, var_y = models.freeze_probe(m, past, frozen, n_samples=64, seed=7)
        ratio = (var_x / var_y) if frozen == "x" else (var_y / var_x)
        print(f"{name:10s} {frozen:>7s} {var_x:9.5f} {var_y:9.5f}   {ratio:6.3f}")

print("\ntrained ratios far below 1 mean the frozen block owned that")
print("agent's motion; the untrained control stays near 1 because its")
print("latent blocks are still interchangeable.")

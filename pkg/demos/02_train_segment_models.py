"""Train a small leader/follower segment-model pair and inspect it.

A segment model is a CVAE over H-step feature windows: the encoder reads
a future segment into a diagonal Gaussian posterior, the decoder turns
(past window, latent) back into the future segment.  Sampling the latent
from the prior makes the decoder a multi-step dynamics model.

Runs in a couple of minutes at this scale; reconstructions are soft but
the structure (prey flees, predator drifts) is already visible.
"""

import numpy as np

from mamsgm import env, models, training
from mamsgm.tensor import Tensor

N_TRAJ = 400
EPOCHS = 30

scenario = env.SCENARIO_BUILDERS["predator_prey"]()
dataset = env.collect_dataset(scenario, N_TRAJ, seed=5, threads=4)
print(f"dataset: {len(dataset)} trajectories of {scenario.episode_length} steps")

config = training.TrainConfig(epochs=EPOCHS, seed=5)
model_x = models.make_segment_model("conditional-x", channels=16, latent=8,
                                    segment_length=scenario.segment_length, seed=5)
model_y = models.make_segment_model("conditional-y", channels=16, latent=8,
                                    segment_length=scenario.segment_length, seed=6)
report_x = training.train_segment_model(model_x, dataset, config)
report_y = training.train_segment_model(model_y, dataset, config)
print(f"leader   heldout mse {report_x.final.heldout:.4f}  (loss {report_x.final.loss:.4f})")
print(f"follower heldout mse {report_y.final.heldout:.4f}  (loss {report_y.final.loss:.4f})")

# posterior reconstruction vs prior samples on one held-out segment
traj = dataset.trajectories[-1]
t0 = scenario.segment_length - 1
past, future, anchors = env.segment_features(traj, t0, scenario)
true_future = traj.positions[t0 + 1: t0 + 1 + scenario.segment_length, 0]

mu, sigma = models.encode(model_x, Tensor(future[0][None]))
recon = models.decode(model_x, past[0][None], mu)
recon_pos = models.segment_positions(recon, Tensor(anchors[0][None])).data[0].T
print(f"\nposterior-mean reconstruction error: "
      f"{np.linalg.norm(recon_pos - true_future, axis=1).mean():.4f}")

draws = np.random.default_rng(0).standard_normal((5, model_x.latent))
futures = models.decode(model_x, np.repeat(past[0][None], 5, axis=0), Tensor(draws))
ends = models.segment_positions(futures, Tensor(np.repeat(anchors[0][None], 5, axis=0))).data[:, :, -1]
print("five prior draws end the segment at:")
for i, end in enumerate(ends):
    print(f"  z{i}: ({end[0]:+.3f}, {end[1]:+.3f})")
print(f"true segment ends at: ({true_future[-1, 0]:+.3f}, {true_future[-1, 1]:+.3f})")

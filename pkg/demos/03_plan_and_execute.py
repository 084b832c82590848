"""One closed-loop pursuit episode: plan in latent space, track, re-plan.

The planner does gradient ascent on the leader model's latents while the
follower model supplies opponent futures sampled from its prior; the
best restart's first segment is handed to the inverse-dynamics tracker,
executed against a live opponent, and the whole thing repeats at the
next segment boundary.

Trains small models from scratch, so expect a few minutes.
"""

import pathlib

import numpy as np

from mamsgm import env, executor, models, plots, training
from mamsgm.planner import PlanConfig, RiskConfig

OUT = pathlib.Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

scenario = env.SCENARIO_BUILDERS["predator_prey"]()
dataset = env.collect_dataset(scenario, 600, seed=9, threads=4)
config = training.TrainConfig(epochs=40, seed=9)

model_x = models.make_segment_model("conditional-x", 16, 8, scenario.segment_length, seed=9)
model_y = models.make_segment_model("conditional-y", 16, 8, scenario.segment_length, seed=10)
training.train_segment_model(model_x, dataset, config)
training.train_segment_model(model_y, dataset, config)
inverse = models.make_inverse_model(seed=9)
training.train_transition_model(inverse, dataset, training.TrainConfig(epochs=30, seed=9), kind="inverse")
print("models trained")

strategy = executor.SegmentStrategy(model_x, model_y)
record = executor.run_mpc_episode(
    scenario, strategy, inverse,
    risk=RiskConfig(),
    cfg=PlanConfig(restarts=6, samples=10, segments=4, iterations=30, lr=0.05),
    opponent="exploration",
    seed=42,
)

H = scenario.segment_length
print(f"\nepisode: {record.warmup_steps} warm-up steps + "
      f"{len(record.executed) - record.warmup_steps} planned steps")
print(f"mean distance cost over the planned phase: {record.mean_cost:.3f}")
for i, obj in enumerate(record.plan_objectives):
    realized = record.rewards[H + i * H: H + (i + 1) * H, 0].sum()
    print(f"  plan {i}: imagined return {obj:+8.3f} over {4 - i} segments,"
          f" realized {realized:+.3f} on its first")

path = OUT / "mpc_episode.svg"
plots.save_svg(path, plots.render(scenario, plots.episode_traces(record, scenario)))
print(f"\nexecuted vs planned paths -> {path}")

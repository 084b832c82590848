"""Roll exploration episodes in each scenario and render them to SVG.

Shows the three worlds (wall pursuit, safe-zone pursuit, goal with a
bumper opponent), the exploration policy that generates training data,
and the deterministic replay property everything downstream relies on.
"""

import pathlib

import numpy as np

from mamsgm import env, plots

OUT = pathlib.Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

for name in ("predator_prey", "safe_zone", "box_bumper"):
    scenario = env.SCENARIO_BUILDERS[name]()
    rng = np.random.default_rng(3)
    state = env.initial_state(scenario, rng)
    policies = [env.ExplorationPolicy(scenario, agent, rng) for agent in (0, 1)]
    traj = env.rollout_policies(scenario, state, policies, scenario.episode_length)

    # determinism: stepping the recorded actions reproduces the record bit for bit
    s = traj.state(0)
    for t in range(len(traj) - 1):
        s = env.step(scenario, s, traj.actions[t])
        assert np.array_equal(s.positions, traj.positions[t + 1])

    rewards = np.array([env.reward(scenario, traj.state(t)) for t in range(len(traj))])
    svg = plots.render(scenario, plots.trajectory_traces(traj.positions, scenario.segment_length))
    path = OUT / f"explore_{name}.svg"
    plots.save_svg(path, svg)
    print(f"{name:14s} steps={len(traj)}  mean reward x={rewards[:, 0].mean():+.3f}  -> {path.name}")

print(f"\nwrote SVGs to {OUT}")

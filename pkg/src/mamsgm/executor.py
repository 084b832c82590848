"""Closed-loop control: re-plan at every segment boundary, track the first
planned segment with the inverse model, repeat against a live opponent.

An episode is ``H`` exploration warm-up steps (both agents, so the first
plan has a full past window) followed by ``k`` planned segments.  Plan
``i`` covers the remaining ``k - i`` segments from the current real joint
state; only its first segment is executed.  The opponent never shares its
future actions with the planner: plans see the realized history and
nothing else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import models
from .env import (
    AGENT_X,
    AGENT_Y,
    Dataset,
    ExplorationPolicy,
    Scenario,
    Trajectory,
    WorldState,
    exploration_actions,
    initial_state,
    reward,
    step,
    window_features,
)
from .io import write_dataset
from .planner import (
    DisentangledAdapter,
    ConditionalAdapter,
    PlanConfig,
    RiskConfig,
    SingleStepAdapter,
    goal_objective,
    plan,
    pursuit_objective,
)

__all__ = [
    "EpisodeRecord",
    "PlannedSegment",
    "SegmentStrategy",
    "DisentangledStrategy",
    "SingleStepStrategy",
    "RandomStrategy",
    "Opponent",
    "StationaryOpponent",
    "ExplorationOpponent",
    "WorstCasePrey",
    "MidpointBlocker",
    "ScriptedOpponent",
    "make_opponent",
    "scenario_objective",
    "reachable_displacement",
    "track_segment",
    "run_mpc_episode",
    "run_episodes",
    "replay_deviation",
    "save_episodes",
]


def scenario_objective(scenario: Scenario):
    return goal_objective(scenario) if scenario.goal is not None else pursuit_objective(scenario)


# ---------------------------------------------------------------------------
# plan carriers and strategies
# ---------------------------------------------------------------------------


@dataclass
class PlannedSegment:
    """One re-plan: either positions to track or actions to apply.

    ``positions`` is ``(2, H)`` absolute coordinates for the controlled
    agent; ``actions`` is ``(H, 2)``.  Exactly one of them is set.
    ``full`` keeps the representative positions over every remaining
    segment for the episode record.
    """

    positions: np.ndarray | None
    actions: np.ndarray | None
    full: np.ndarray | None
    objective: float


class SegmentStrategy:
    """Plan through a leader/follower pair of segment models."""

    def __init__(self, model_x, model_y, name: str = "tsm-conditional"):
        self.model_x = model_x
        self.model_y = model_y
        self.name = name

    def plan_segment(self, scenario, past, anchors, state, segments, cfg, risk, plan_seed, rng):
        adapter = ConditionalAdapter(self.model_x, self.model_y, past, anchors)
        res = plan(adapter, scenario_objective(scenario), risk, replace(cfg, segments=segments, seed=plan_seed))
        H = scenario.segment_length
        return PlannedSegment(res.positions_x[:, :H], None, res.positions_x, res.objective)


class DisentangledStrategy:
    """Plan the agent-x block of a joint disentangled model."""

    def __init__(self, model, name: str = "tsm-disentangled"):
        self.model = model
        self.name = name

    def plan_segment(self, scenario, past, anchors, state, segments, cfg, risk, plan_seed, rng):
        adapter = DisentangledAdapter(self.model, past, anchors)
        res = plan(adapter, scenario_objective(scenario), risk, replace(cfg, segments=segments, seed=plan_seed))
        H = scenario.segment_length
        return PlannedSegment(res.positions_x[:, :H], None, res.positions_x, res.objective)


class SingleStepStrategy:
    """Baseline: optimize raw action sequences through the one-step model.

    The optimizer returns actions, but execution still tracks the model's
    predicted positions so every method goes through the same controller.
    """

    def __init__(self, model, name: str = "single-step"):
        self.model = model
        self.name = name

    def plan_segment(self, scenario, past, anchors, state, segments, cfg, risk, plan_seed, rng):
        adapter = SingleStepAdapter(self.model, scenario, state.positions, state.velocities, start_t=state.t)
        res = plan(adapter, scenario_objective(scenario), risk, replace(cfg, segments=segments, seed=plan_seed))
        H = scenario.segment_length
        return PlannedSegment(res.positions_x[:, :H], None, res.positions_x, res.objective)


class RandomStrategy:
    """No planning at all: the controlled agent keeps exploring."""

    def __init__(self, name: str = "random"):
        self.name = name

    def plan_segment(self, scenario, past, anchors, state, segments, cfg, risk, plan_seed, rng):
        acts = exploration_actions(scenario, rng, scenario.segment_length, start_t=state.t)
        return PlannedSegment(None, acts, None, float("nan"))


# ---------------------------------------------------------------------------
# opponents
# ---------------------------------------------------------------------------


class Opponent:
    """Per-step action source for agent y during the planned phase."""

    name = "opponent"

    def begin_segment(self, state: WorldState):
        """Called once at every re-planning boundary."""

    def __call__(self, state: WorldState) -> np.ndarray:
        raise NotImplementedError


class StationaryOpponent(Opponent):
    name = "stationary"

    def __call__(self, state):
        return np.zeros(2)


class ExplorationOpponent(Opponent):
    name = "exploration"

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        self.policy = ExplorationPolicy(scenario, AGENT_Y, rng)

    def __call__(self, state):
        return self.policy(state)


class WorstCasePrey(Opponent):
    """Adversarial evaluation prey for the safe-zone tables.

    At every boundary it draws ``m`` exploration candidate segments, runs
    each in the real simulator with the predator frozen, and commits to
    the candidate that minimizes the predator's summed reward.
    """

    name = "worst-case"

    def __init__(self, scenario: Scenario, rng: np.random.Generator, m: int = 10):
        self.scenario = scenario
        self.rng = rng
        self.m = m
        self.buffer: list[np.ndarray] = []

    def begin_segment(self, state):
        sc = self.scenario
        H = sc.segment_length
        best, best_total = None, np.inf
        for _ in range(self.m):
            acts = exploration_actions(sc, self.rng, H, start_t=state.t)
            s = state.copy()
            total = 0.0
            for t in range(H):
                s = step(sc, s, np.stack([np.zeros(2), acts[t]]))
                total += reward(sc, s)[AGENT_X]
            if total < best_total:
                best, best_total = acts, total
        self.buffer = list(best)

    def __call__(self, state):
        if not self.buffer:
            raise RuntimeError("worst-case prey stepped without begin_segment")
        return self.buffer.pop(0)


class MidpointBlocker(Opponent):
    """Bumper blocker: push toward the midpoint of the mover and the goal."""

    name = "blocker"

    def __init__(self, scenario: Scenario):
        self.goal = np.asarray(scenario.goal, dtype=np.float64)

    def __call__(self, state):
        mid = 0.5 * (state.positions[AGENT_X] + self.goal)
        d = mid - state.positions[AGENT_Y]
        norm = float(np.hypot(d[0], d[1]))
        return d / norm if norm > 1e-12 else np.zeros(2)


class ScriptedOpponent(Opponent):
    """Replays a fixed action table indexed by absolute step; test fodder."""

    name = "scripted"

    def __init__(self, actions: np.ndarray):
        self.actions = np.asarray(actions, dtype=np.float64)

    def __call__(self, state):
        return self.actions[state.t].copy()


def make_opponent(name: str, scenario: Scenario, rng: np.random.Generator, m: int = 10) -> Opponent:
    if name == "stationary":
        return StationaryOpponent()
    if name == "exploration":
        return ExplorationOpponent(scenario, rng)
    if name == "worst-case":
        return WorstCasePrey(scenario, rng, m)
    if name == "blocker":
        return MidpointBlocker(scenario)
    raise ValueError(f"unknown opponent {name!r}")


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def reachable_displacement(scenario: Scenario, velocity: np.ndarray, requested: np.ndarray) -> np.ndarray:
    """Project a requested one-step displacement onto the feasible disc.

    Free-space dynamics reach exactly ``v * (1 - damping) * dt + u * dt^2``
    with ``|u| <= 1``, a disc the planner's imagined steps can overshoot
    by an order of magnitude.  Saturating the reference here keeps the
    inverse model on inputs it was trained on and turns an over-ambitious
    waypoint into full thrust toward it.
    """
    center = velocity * (1.0 - scenario.damping) * scenario.dt
    radius = scenario.dt * scenario.dt
    excess = requested - center
    n = float(np.hypot(excess[0], excess[1]))
    if n <= radius:
        return requested
    return center + excess * (radius / n)


def track_segment(scenario: Scenario, state: WorldState, planned: np.ndarray, inverse_model, opponent=None):
    """Follow ``planned`` ``(2, H)`` absolute positions with the inverse model.

    Each step asks the model for the action that moves the controlled
    agent from its real state onto the next planned position (saturated
    to the reachable disc); the target velocity is the one the physics
    implies for that displacement.  Returns the executed ``Trajectory``
    and the final state.
    """
    planned = np.asarray(planned, dtype=np.float64)
    H = planned.shape[1]
    pos = np.zeros((H, 2, 2))
    vel = np.zeros((H, 2, 2))
    act = np.zeros((H, 2, 2))
    s = state.copy()
    for t in range(H):
        dpos = reachable_displacement(scenario, s.velocities[AGENT_X], planned[:, t] - s.positions[AGENT_X])
        v_next = dpos / scenario.dt
        obsvec = scenario.obstacle_center - s.positions[AGENT_X]
        a_x = models.inverse_action(inverse_model, s.velocities[AGENT_X], v_next, dpos, obsvec)[0]
        a_y = opponent(s) if opponent is not None else np.zeros(2)
        a = np.stack([a_x, a_y])
        pos[t], vel[t], act[t] = s.positions, s.velocities, a
        s = step(scenario, s, a)
    return Trajectory(pos, vel, act), s


def _apply_actions(scenario, state, actions, opponent):
    H = actions.shape[0]
    pos = np.zeros((H, 2, 2))
    vel = np.zeros((H, 2, 2))
    act = np.zeros((H, 2, 2))
    s = state.copy()
    for t in range(H):
        a = np.stack([np.clip(actions[t], -1.0, 1.0), opponent(s)])
        pos[t], vel[t], act[t] = s.positions, s.velocities, a
        s = step(scenario, s, a)
    return Trajectory(pos, vel, act), s


@dataclass
class EpisodeRecord:
    """Everything one closed-loop episode produced.

    ``rewards[t]`` is the reward of the state each step landed in, so the
    cumulative cost is the negated agent-x reward summed over the planned
    phase (warm-up excluded).  ``planned`` holds each re-plan's
    representative positions over all remaining segments.
    """

    scenario_name: str
    strategy: str
    opponent: str
    seed: int
    plan_seeds: list
    warmup_steps: int
    executed: Trajectory
    planned: list
    plan_objectives: list
    rewards: np.ndarray
    cost: float

    @property
    def mean_cost(self) -> float:
        return self.cost / float(len(self.executed) - self.warmup_steps)


def _plan_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, 2, index)).generate_state(1)[0])


def _rewards_after_steps(scenario, traj: Trajectory, final_state: WorldState) -> np.ndarray:
    T = len(traj)
    out = np.zeros((T, 2))
    for t in range(T - 1):
        out[t] = reward(scenario, traj.state(t + 1))
    out[T - 1] = reward(scenario, final_state)
    return out


def run_mpc_episode(
    scenario: Scenario,
    strategy,
    inverse_model,
    risk: RiskConfig,
    cfg: PlanConfig,
    opponent,
    seed: int,
    x_region=None,
    y_region=None,
) -> EpisodeRecord:
    """One warm-up-plus-``k``-segments episode; fully determined by ``seed``.

    ``opponent`` is a name accepted by ``make_opponent`` or a ready
    ``Opponent`` instance.  Separate derived streams drive the warm-up,
    the opponent, and each plan, so swapping one cannot leak into the
    others.
    """
    k = cfg.segments
    if k < 1:
        raise ValueError("need at least one planned segment")
    H = scenario.segment_length
    rng_env = np.random.default_rng((seed, 0))
    rng_opp = np.random.default_rng((seed, 1))
    rng_strategy = np.random.default_rng((seed, 3))
    opp = make_opponent(opponent, scenario, rng_opp) if isinstance(opponent, str) else opponent

    state = initial_state(scenario, rng_env, x_region=x_region, y_region=y_region)
    explorers = [ExplorationPolicy(scenario, a, rng_env) for a in (AGENT_X, AGENT_Y)]
    warmup, state = _run_warmup(scenario, state, explorers, H)

    chunks = [warmup]
    planned, objectives, plan_seeds = [], [], []
    for i in range(k):
        window = _history_window(chunks, state, H)
        past, anchors = window_features(window[0], window[1], scenario)
        ps = _plan_seed(seed, i)
        plan_seeds.append(ps)
        try:
            seg = strategy.plan_segment(scenario, past, anchors, state, k - i, cfg, risk, ps, rng_strategy)
        except FloatingPointError as e:
            e.add_note(f"episode seed {seed}, segment {i}, strategy {strategy.name}")
            raise
        planned.append(seg.full)
        objectives.append(seg.objective)
        opp.begin_segment(state)
        if seg.actions is not None:
            chunk, state = _apply_actions(scenario, state, seg.actions, opp)
        else:
            chunk, state = track_segment(scenario, state, seg.positions, inverse_model, opp)
        chunks.append(chunk)

    executed = Trajectory(
        np.concatenate([c.positions for c in chunks]),
        np.concatenate([c.velocities for c in chunks]),
        np.concatenate([c.actions for c in chunks]),
    )
    rewards = _rewards_after_steps(scenario, executed, state)
    cost = float(-rewards[H:, AGENT_X].sum())
    return EpisodeRecord(
        scenario_name=scenario.name,
        strategy=strategy.name,
        opponent=opp.name,
        seed=seed,
        plan_seeds=plan_seeds,
        warmup_steps=H,
        executed=executed,
        planned=planned,
        plan_objectives=objectives,
        rewards=rewards,
        cost=cost,
    )


def _run_warmup(scenario, state, explorers, n):
    pos = np.zeros((n, 2, 2))
    vel = np.zeros((n, 2, 2))
    act = np.zeros((n, 2, 2))
    s = state
    for t in range(n):
        a = np.stack([explorers[0](s), explorers[1](s)])
        pos[t], vel[t], act[t] = s.positions, s.velocities, a
        s = step(scenario, s, a)
    return Trajectory(pos, vel, act), s


def _history_window(chunks, state, H):
    """Last ``H`` states ending at the current one, as (positions, velocities)."""
    pos = np.concatenate([c.positions for c in chunks])
    vel = np.concatenate([c.velocities for c in chunks])
    win_p = np.concatenate([pos[-(H - 1) :], state.positions[None]])
    win_v = np.concatenate([vel[-(H - 1) :], state.velocities[None]])
    return win_p, win_v


def run_episodes(scenario, strategy, inverse_model, risk, cfg, opponent, seeds, threads: int = 1, x_region=None, y_region=None):
    """Independent episodes for each seed; order and count of threads moot."""

    def one(seed):
        return run_mpc_episode(
            scenario, strategy, inverse_model, risk, cfg, opponent, seed, x_region=x_region, y_region=y_region
        )

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def replay_deviation(scenario: Scenario, traj: Trajectory) -> float:
    """Max state deviation when re-stepping the recorded actions from row 0."""
    s = traj.state(0)
    worst = 0.0
    for t in range(len(traj) - 1):
        s = step(scenario, s, traj.actions[t])
        worst = max(
            worst,
            float(np.abs(s.positions - traj.positions[t + 1]).max()),
            float(np.abs(s.velocities - traj.velocities[t + 1]).max()),
        )
    return worst


def save_episodes(prefix, scenario: Scenario, records: list[EpisodeRecord], config_hash: str = ""):
    """Write ``<prefix>.bin`` (executed trajectories) and ``<prefix>.json``."""
    base = records[0]
    # episodes are warm-up plus k segments, not the collection length
    stamped = scenario if scenario.episode_length == len(base.executed) else replace(
        scenario, episode_length=len(base.executed)
    )
    ds = Dataset(stamped, [r.executed for r in records], base.seed)
    write_dataset(f"{prefix}.bin", ds)
    summary = {
        "scenario": scenario.name,
        "strategy": base.strategy,
        "opponent": base.opponent,
        "config_hash": config_hash,
        "episodes": [
            {
                "seed": r.seed,
                "cost": r.cost,
                "mean_cost": r.mean_cost,
                "plan_seeds": r.plan_seeds,
                "plan_objectives": r.plan_objectives,
                "planned": [None if p is None else np.asarray(p).tolist() for p in r.planned],
            }
            for r in records
        ],
        "mean_cost": float(np.mean([r.mean_cost for r in records])),
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

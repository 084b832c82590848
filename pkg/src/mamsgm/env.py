"""Deterministic 2-D particle world with two interacting agents.

Agents are discs pushed around a square arena by bounded forces.  The
integrator is semi-implicit with strong velocity damping, and contact
with rectangular obstacles (and optionally the other agent) is resolved
by a stiff penalty spring.  Everything is pure float64 numpy with no
hidden state, so replaying a recorded action sequence from the same
initial state reproduces every stored state bit for bit.

Three scenario variants are provided:

* ``predator_prey``   -- pursuit across a vertical wall, no agent contact.
* ``safe_zone``       -- same arena, but rewards vanish while the prey's
                         center is inside a corner refuge.
* ``box_bumper``      -- one agent pushes toward a goal behind a horizontal
                         wall while the other can physically block it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Box",
    "Scenario",
    "WorldState",
    "Trajectory",
    "Dataset",
    "predator_prey",
    "safe_zone",
    "box_bumper",
    "step",
    "reward",
    "contact_forces",
    "kinetic_energy",
    "contact_potential",
    "ExplorationPolicy",
    "exploration_actions",
    "initial_state",
    "rollout_policies",
    "collect_dataset",
    "window_features",
    "segment_features",
    "features_to_positions",
    "segment_start_range",
]

AGENT_X = 0  # predator / goal-seeker
AGENT_Y = 1  # prey / blocker


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0])

    def contains(self, p) -> bool:
        return bool(self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1)

    def closest_point(self, p) -> np.ndarray:
        return np.array([min(max(p[0], self.x0), self.x1), min(max(p[1], self.y0), self.y1)])


@dataclass(frozen=True)
class Scenario:
    """Immutable physics and task description for one environment variant.

    ``action_mode`` only shapes the exploration policy (continuous headings
    versus the four cardinal pushes); the simulator itself accepts any
    force vector and clips it to unit magnitude.
    """

    name: str
    half_extent: float = 1.5
    dt: float = 0.1
    damping: float = 0.25
    contact_stiffness: float = 100.0
    agent_radius: float = 0.1
    episode_length: int = 50
    segment_length: int = 10
    action_mode: str = "continuous"
    agent_contact: bool = False
    exploration_hold: int = 5
    exploration_bias: bool = False
    obstacles: tuple[Box, ...] = field(default_factory=tuple)
    safe_zone: Box | None = None
    goal: tuple[float, float] | None = None

    @property
    def obstacle_center(self) -> np.ndarray:
        if self.obstacles:
            return self.obstacles[0].center
        return np.zeros(2)


def predator_prey() -> Scenario:
    # Vertical wall through the middle, leaving gaps above and below.
    wall = Box(-0.05, 0.05, -0.8, 0.8)
    return Scenario(name="predator_prey", agent_radius=0.1, obstacles=(wall,))


def safe_zone() -> Scenario:
    base = predator_prey()
    zone = Box(0.7, 1.5, -1.5, -0.7)
    return replace(base, name="safe_zone", safe_zone=zone)


def box_bumper() -> Scenario:
    # Horizontal wall in the lower half; the goal sits below its midpoint
    # so the reachable passages at either end can be body-blocked by the
    # relatively large discs.
    wall = Box(-0.75, 0.75, -0.55, -0.45)
    return Scenario(
        name="box_bumper",
        agent_radius=0.25,
        action_mode="cardinal",
        agent_contact=True,
        exploration_bias=True,
        obstacles=(wall,),
        goal=(0.0, -1.0),
    )


SCENARIO_BUILDERS = {
    "predator_prey": predator_prey,
    "safe_zone": safe_zone,
    "box_bumper": box_bumper,
}


@dataclass
class WorldState:
    positions: np.ndarray  # (2, 2) agent x, agent y
    velocities: np.ndarray  # (2, 2)
    t: int = 0

    def copy(self) -> "WorldState":
        return WorldState(self.positions.copy(), self.velocities.copy(), self.t)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _disc_rect_contact(p, radius, box: Box, stiffness):
    """Penalty force pushing a disc out of a rectangle, zero when clear."""
    q = box.closest_point(p)
    d = p - q
    dist = float(np.hypot(d[0], d[1]))
    if dist > 0.0:
        if dist >= radius:
            return np.zeros(2)
        return stiffness * (radius - dist) * (d / dist)
    # Center inside the rectangle: push out through the nearest face.
    gaps = np.array([p[0] - box.x0, box.x1 - p[0], p[1] - box.y0, box.y1 - p[1]])
    face = int(np.argmin(gaps))
    normal = np.array([(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)][face])
    return stiffness * (radius + gaps[face]) * normal


def contact_forces(scenario: Scenario, positions: np.ndarray) -> np.ndarray:
    """Total contact force on each agent at the given positions."""
    f = np.zeros((2, 2))
    for i in range(2):
        for box in scenario.obstacles:
            f[i] += _disc_rect_contact(positions[i], scenario.agent_radius, box, scenario.contact_stiffness)
    if scenario.agent_contact:
        d = positions[0] - positions[1]
        dist = float(np.hypot(d[0], d[1]))
        min_dist = 2.0 * scenario.agent_radius
        if 0.0 < dist < min_dist:
            push = scenario.contact_stiffness * (min_dist - dist) * (d / dist)
            f[0] += push
            f[1] -= push
    return f


def _clip_force(actions: np.ndarray) -> np.ndarray:
    norms = np.hypot(actions[:, 0], actions[:, 1])
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    return actions * scale[:, None]


def step(scenario: Scenario, state: WorldState, actions: np.ndarray) -> WorldState:
    """Advance one tick.

    Applied forces are clipped to unit magnitude per agent.  With damping
    ``delta`` the update is

        v' = v * (1 - delta) + (F_applied + F_contact) * dt
        p' = p + v' * dt

    and positions are then clamped to the arena box.
    """
    f_app = _clip_force(np.asarray(actions, dtype=np.float64))
    f_con = contact_forces(scenario, state.positions)
    v = state.velocities * (1.0 - scenario.damping) + (f_app + f_con) * scenario.dt
    p = state.positions + v * scenario.dt
    h = scenario.half_extent
    p = np.clip(p, -h, h)
    return WorldState(p, v, state.t + 1)


def kinetic_energy(state: WorldState) -> float:
    return float(0.5 * np.sum(state.velocities**2))


def contact_potential(scenario: Scenario, state: WorldState) -> float:
    """Elastic energy stored in active penalty springs."""
    total = 0.0
    r = scenario.agent_radius
    for i in range(2):
        for box in scenario.obstacles:
            q = box.closest_point(state.positions[i])
            d = state.positions[i] - q
            dist = float(np.hypot(d[0], d[1]))
            if dist < r:
                total += 0.5 * scenario.contact_stiffness * (r - dist) ** 2
    if scenario.agent_contact:
        d = state.positions[0] - state.positions[1]
        dist = float(np.hypot(d[0], d[1]))
        if dist < 2.0 * r:
            total += 0.5 * scenario.contact_stiffness * (2.0 * r - dist) ** 2
    return total


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def reward(scenario: Scenario, state: WorldState) -> tuple[float, float]:
    """Per-step zero-sum rewards ``(r_x, r_y)``.

    Pursuit: the predator is rewarded for closing the gap, ``r_x`` is the
    negative distance to the prey.  With a safe zone, both rewards are
    exactly zero while the prey's center is inside it.  Bumper: the mover
    is rewarded for approaching the goal; the blocker gets the negative.
    """
    if scenario.goal is not None:
        d = state.positions[AGENT_X] - np.asarray(scenario.goal)
        r_x = -float(np.hypot(d[0], d[1]))
        return r_x, -r_x
    if scenario.safe_zone is not None and scenario.safe_zone.contains(state.positions[AGENT_Y]):
        return 0.0, 0.0
    d = state.positions[AGENT_X] - state.positions[AGENT_Y]
    r_x = -float(np.hypot(d[0], d[1]))
    return r_x, -r_x


# ---------------------------------------------------------------------------
# exploration
# ---------------------------------------------------------------------------

_CARDINALS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


class ExplorationPolicy:
    """Unit-force random walk: hold a heading for a fixed number of steps.

    Continuous mode draws headings uniformly on ``[0, 2*pi)``.  Cardinal
    mode picks one of the four axis pushes; with ``exploration_bias`` the
    cardinal nearest the other agent is chosen half the time, which keeps
    the bumper agents interacting often enough to learn contact.
    """

    def __init__(self, scenario: Scenario, agent: int, rng: np.random.Generator):
        self.scenario = scenario
        self.agent = agent
        self.rng = rng
        self.force = np.zeros(2)

    def __call__(self, state: WorldState) -> np.ndarray:
        if state.t % self.scenario.exploration_hold == 0:
            self.force = self._sample(state)
        return self.force.copy()

    def _sample(self, state: WorldState) -> np.ndarray:
        if self.scenario.action_mode == "cardinal":
            if self.scenario.exploration_bias and self.rng.random() < 0.5:
                other = state.positions[1 - self.agent] - state.positions[self.agent]
                scores = _CARDINALS @ other
                return _CARDINALS[int(np.argmax(scores))].copy()
            return _CARDINALS[int(self.rng.integers(4))].copy()
        theta = self.rng.uniform(0.0, 2.0 * np.pi)
        return np.array([np.cos(theta), np.sin(theta)])


# ---------------------------------------------------------------------------
# trajectories and datasets
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """T recorded steps: state at t plus the action applied at t."""

    positions: np.ndarray  # (T, 2, 2)
    velocities: np.ndarray  # (T, 2, 2)
    actions: np.ndarray  # (T, 2, 2)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def state(self, t: int) -> WorldState:
        return WorldState(self.positions[t].copy(), self.velocities[t].copy(), t)


@dataclass
class Dataset:
    scenario: Scenario
    trajectories: list[Trajectory]
    seed: int

    def __len__(self) -> int:
        return len(self.trajectories)


def _penetrates(scenario: Scenario, p) -> bool:
    for box in scenario.obstacles:
        q = box.closest_point(p)
        if np.hypot(*(p - q)) < scenario.agent_radius:
            return True
    return False


def initial_state(
    scenario: Scenario,
    rng: np.random.Generator,
    x_region: Box | None = None,
    y_region: Box | None = None,
) -> WorldState:
    """Rejection-sample a clearance-respecting start with agents at rest."""
    margin = scenario.half_extent - scenario.agent_radius
    regions = [x_region, y_region]
    pos = np.zeros((2, 2))
    for i in range(2):
        reg = regions[i]
        for _ in range(1000):
            if reg is None:
                p = rng.uniform(-margin, margin, size=2)
            else:
                p = np.array(
                    [rng.uniform(max(reg.x0, -margin), min(reg.x1, margin)),
                     rng.uniform(max(reg.y0, -margin), min(reg.y1, margin))]
                )
            if _penetrates(scenario, p):
                continue
            if i == 1 and scenario.agent_contact and np.hypot(*(p - pos[0])) < 2 * scenario.agent_radius:
                continue
            pos[i] = p
            break
        else:
            raise RuntimeError("could not place agent clear of obstacles")
    return WorldState(pos, np.zeros((2, 2)), 0)


def rollout_policies(scenario: Scenario, state: WorldState, policies, n_steps: int) -> Trajectory:
    """Run one policy per agent for ``n_steps`` from ``state``."""
    pos = np.zeros((n_steps, 2, 2))
    vel = np.zeros((n_steps, 2, 2))
    act = np.zeros((n_steps, 2, 2))
    s = state.copy()
    for t in range(n_steps):
        a = np.stack([policies[0](s), policies[1](s)])
        pos[t] = s.positions
        vel[t] = s.velocities
        act[t] = a
        s = step(scenario, s, a)
    return Trajectory(pos, vel, act)


def exploration_actions(scenario: Scenario, rng: np.random.Generator, n_steps: int, start_t: int = 0) -> np.ndarray:
    """Pre-drawn exploration action sequence ``(n_steps, 2)``.

    Matches the continuous random walk (headings held ``exploration_hold``
    steps) without needing a live state, which is what planner adversary
    sampling and worst-case opponent candidates want.  The cardinal mode's
    bias depends on the other agent's live position, so it has no
    stateless counterpart here.
    """
    if scenario.action_mode != "continuous":
        raise ValueError("stateless exploration sequences exist only for continuous actions")
    acts = np.zeros((n_steps, 2))
    force = np.zeros(2)
    for t in range(n_steps):
        if (start_t + t) % scenario.exploration_hold == 0 or t == 0:
            theta = rng.uniform(0.0, 2.0 * np.pi)
            force = np.array([np.cos(theta), np.sin(theta)])
        acts[t] = force
    return acts


def _collect_one(scenario: Scenario, seed: int, index: int) -> Trajectory:
    # Every episode owns a stream derived from (seed, index), so results
    # do not depend on collection order or thread scheduling.
    rng = np.random.default_rng((seed, index))
    state = initial_state(scenario, rng)
    policies = [ExplorationPolicy(scenario, i, rng) for i in range(2)]
    return rollout_policies(scenario, state, policies, scenario.episode_length)


def collect_dataset(scenario: Scenario, n_traj: int, seed: int, threads: int = 1) -> Dataset:
    """Collect exploration episodes; identical output for any thread count."""
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajs = list(pool.map(lambda i: _collect_one(scenario, seed, i), range(n_traj)))
    else:
        trajs = [_collect_one(scenario, seed, i) for i in range(n_traj)]
    return Dataset(scenario, trajs, seed)


# ---------------------------------------------------------------------------
# segment features
# ---------------------------------------------------------------------------

FEATURES_PER_AGENT = 6  # (dpx, dpy, vx, vy, ox, oy)


def segment_start_range(T: int, H: int) -> range:
    """Valid past-window end indices t0 for an H+H segment pair."""
    return range(H - 1, T - 2 * H + 1)


def segment_features(traj: Trajectory, t0: int, scenario: Scenario):
    """Feature windows around ``t0`` for both agents.

    The past window covers ``[t0-H+1, t0]`` and the future window
    ``[t0+1, t0+H]``.  Each agent's rows are its position offset by that
    agent's location at the start of the past window (the segment anchor),
    its velocity, and the un-offset vector from the agent to the obstacle
    center.  Returns ``(past, future, anchors)`` with ``past`` and
    ``future`` of shape ``(2, 6, H)`` and ``anchors`` of shape ``(2, 2)``.
    """
    H = scenario.segment_length
    lo, hi = t0 - H + 1, t0 + H + 1
    if lo < 0 or hi > len(traj):
        raise ValueError(f"segment [{lo}, {hi}) out of range for trajectory of length {len(traj)}")
    past, anchors = window_features(traj.positions[lo : t0 + 1], traj.velocities[lo : t0 + 1], scenario)
    fut, _ = window_features(traj.positions[t0 + 1 : hi], traj.velocities[t0 + 1 : hi], scenario, anchors)
    return past, fut, anchors


def window_features(positions, velocities, scenario: Scenario, anchors=None):
    """Feature rows ``(2, 6, H)`` for one window of raw states.

    ``anchors`` defaults to each agent's position at the window start; a
    future window passes the anchors of the past window it extends.
    """
    p = np.asarray(positions)  # (H, 2, 2)
    v = np.asarray(velocities)
    if anchors is None:
        anchors = p[0].copy()
    center = scenario.obstacle_center
    feats = np.empty((2, FEATURES_PER_AGENT, p.shape[0]))
    for i in range(2):
        feats[i, 0:2] = (p[:, i] - anchors[i]).T
        feats[i, 2:4] = v[:, i].T
        feats[i, 4:6] = (center - p[:, i]).T
    return feats, anchors


def features_to_positions(features: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Recover absolute positions ``(H, 2)`` from one agent's feature rows."""
    return features[0:2].T + anchor


def feature_velocities(features: np.ndarray) -> np.ndarray:
    return features[2:4].T

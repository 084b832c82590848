"""Risk-sensitive trajectory optimization in latent strategy space.

A plan is a sequence of per-segment latent codes for the controlled agent.
``plan()`` draws a fixed set of opponent samples up front, rolls every
restart out against every sample, scores each rollout by cumulative
reward, aggregates the per-restart scores with :func:`cvar`, and ascends
that objective by gradient steps on the controlled latents only.  Common
random numbers (the opponent samples never change within one plan) make
the objective deterministic, so safeguarded ascent is well defined: any
restart whose objective drops is rolled back and continues with a halved
step size.

Model access goes through small adapter classes so the same optimizer
serves the conditional model pair, the disentangled joint model, the
single-step baseline (whose "latents" are raw action sequences), and a
linear stub used to check the optimizer against a least-squares solution.

``verify_saddle`` is a separate diagnostic: on quadratic two-player games
with block-structured latent-to-action maps, simultaneous gradient
descent-ascent in latent space should land on the action-space saddle
point; entangling the map breaks that guarantee, and the report says so.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .env import Scenario, exploration_actions
from .tensor import Tensor, backward, concat

__all__ = [
    "RiskConfig",
    "PlanConfig",
    "PlanResult",
    "cvar",
    "plan",
    "replay_objective",
    "plan_trace_csv",
    "ConditionalAdapter",
    "DisentangledAdapter",
    "SingleStepAdapter",
    "LinearAdapter",
    "pursuit_objective",
    "goal_objective",
    "GameSpec",
    "SaddleReport",
    "verify_saddle",
    "saddle_battery",
]


@dataclass(frozen=True)
class RiskConfig:
    alpha: float = 1.0
    direction: str = "neutral"  # averse | neutral | seeking

    def __post_init__(self):
        if self.direction not in ("averse", "neutral", "seeking"):
            raise ValueError(f"unknown risk direction {self.direction!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass(frozen=True)
class PlanConfig:
    restarts: int = 10
    samples: int = 10
    segments: int = 5
    iterations: int = 30
    lr: float = 0.05
    seed: int = 0


@dataclass
class PlanResult:
    """Best restart of one plan call.

    ``objective`` is the value of re-evaluating ``latents`` against the
    stored opponent samples, so replay reproduces it exactly.
    ``positions_x``/``positions_y`` are representative absolute position
    tracks ``(2, k*H)`` (opponent at its prior mean); ``trace`` holds the
    per-restart objective after each evaluation, non-decreasing row-wise.
    """

    latents: np.ndarray
    objective: float
    positions_x: np.ndarray
    positions_y: np.ndarray
    trace: np.ndarray
    adversary: object
    risk: RiskConfig
    config: PlanConfig


# ---------------------------------------------------------------------------
# CVaR
# ---------------------------------------------------------------------------


def _tail_count(alpha: float, m: int) -> int:
    # ceil with a tolerance so 0.2 * 10 does not round up to 3.
    return max(1, math.ceil(alpha * m - 1e-9))


def cvar(samples, risk: RiskConfig) -> float:
    """Mean of the worst (averse) or best (seeking) ``alpha`` tail.

    Neutral ignores ``alpha`` and returns the plain mean; ties are broken
    by stable sort order.
    """
    vals = np.asarray(samples, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("cvar of an empty sample set")
    if risk.direction == "neutral":
        return float(np.mean(vals))
    a = _tail_count(risk.alpha, vals.size)
    order = np.argsort(vals, kind="stable")
    sel = order[:a] if risk.direction == "averse" else order[vals.size - a :]
    return float(np.mean(vals[sel]))


def _cvar_columns(rewards: Tensor, m: int, n: int, risk: RiskConfig) -> Tensor:
    """Taped per-restart CVaR from ``(m*n,)`` rewards in sample-major order."""
    grid = rewards.reshape(m, n)
    if risk.direction == "neutral":
        return grid.mean(axis=0)
    a = _tail_count(risk.alpha, m)
    order = np.argsort(grid.data, axis=0, kind="stable")
    sel = order[:a] if risk.direction == "averse" else order[m - a :]
    flat = (sel * n + np.arange(n)).ravel()
    return rewards[flat].reshape(a, n).sum(axis=0) * (1.0 / a)


# ---------------------------------------------------------------------------
# objectives over predicted positions
# ---------------------------------------------------------------------------


def _step_distance(px: Tensor, py) -> Tensor:
    diff = px - py
    return ((diff * diff).sum(axis=1) + 1e-12).sqrt()


def pursuit_objective(scenario: Scenario):
    """Cumulative pursuer reward: negative distance to the evader per step.

    With a safe zone, steps where the predicted evader sits inside it
    contribute nothing, mirroring the live reward.  The zone mask is a
    constant of the current prediction, so gradients flow only through
    the distance term.
    """
    zone = scenario.safe_zone

    def fn(px: Tensor, py) -> Tensor:
        d = _step_distance(px, py)
        if zone is not None:
            p = py.data if isinstance(py, Tensor) else np.asarray(py)
            inside = (
                (p[:, 0, :] >= zone.x0) & (p[:, 0, :] <= zone.x1)
                & (p[:, 1, :] >= zone.y0) & (p[:, 1, :] <= zone.y1)
            )
            d = d * Tensor(np.where(inside, 0.0, 1.0))
        return -d.sum(axis=1)

    return fn


def goal_objective(scenario: Scenario):
    """Cumulative reward for driving agent x to the scenario goal."""
    goal = np.asarray(scenario.goal, dtype=np.float64).reshape(1, 2, 1)

    def fn(px: Tensor, py) -> Tensor:
        return -_step_distance(px, goal).sum(axis=1)

    return fn


# ---------------------------------------------------------------------------
# model adapters
# ---------------------------------------------------------------------------


def _tile_rows(t: Tensor, m: int) -> Tensor:
    """Differentiable row-block tiling ``(n, ...) -> (m*n, ...)``."""
    return t if m == 1 else concat([t] * m, axis=0)


class ConditionalAdapter:
    """Leader/follower model pair from one joint past window.

    The leader's rollout never sees the opponent samples; the follower
    decodes conditioned on the leader's predicted future, so gradient
    ascent on the leader's latents accounts for the follower's reaction.
    """

    def __init__(self, model_x, model_y, past: np.ndarray, anchors: np.ndarray):
        self.model_x = model_x
        self.model_y = model_y
        self.past = np.asarray(past, dtype=np.float64)
        self.anchors = np.asarray(anchors, dtype=np.float64)

    def init_latents(self, rng, n: int, k: int) -> np.ndarray:
        return rng.standard_normal((n, k, self.model_x.latent))

    def sample_adversary(self, rng, m: int, k: int) -> np.ndarray:
        return rng.standard_normal((m, k, self.model_y.latent))

    def _leader_rollout(self, z: Tensor):
        n, k = z.shape[0], z.shape[1]
        past = Tensor(np.broadcast_to(self.past[0], (n,) + self.past[0].shape).copy())
        anchor = Tensor(np.broadcast_to(self.anchors[0], (n, 2)).copy())
        futures, segments = [], []
        for i in range(k):
            fut = models.decode(self.model_x, past, z[:, i, :])
            segments.append(models.segment_positions(fut, anchor))
            futures.append((past, fut))
            anchor = models.next_anchor(anchor, fut)
            past = models.chain_next_past(fut)
        return futures, concat(segments, axis=2)

    def rollout(self, z: Tensor, w: np.ndarray):
        n, k = z.shape[0], z.shape[1]
        m = w.shape[0]
        futures, pos_x = self._leader_rollout(z)
        b = m * n
        past_y = Tensor(np.broadcast_to(self.past[1], (b,) + self.past[1].shape).copy())
        anchor_y = Tensor(np.broadcast_to(self.anchors[1], (b, 2)).copy())
        segments = []
        for i in range(k):
            past_x, fut_x = futures[i]
            dec_in = concat([_tile_rows(past_x, m), past_y, _tile_rows(fut_x, m)], axis=1)
            w_i = Tensor(np.repeat(w[:, i, :], n, axis=0))
            fut_y = models.decode(self.model_y, dec_in, w_i)
            segments.append(models.segment_positions(fut_y, anchor_y))
            anchor_y = models.next_anchor(anchor_y, fut_y)
            past_y = models.chain_next_past(fut_y)
        return _tile_rows(pos_x, m), concat(segments, axis=2)

    def representative(self, latents: np.ndarray):
        z = Tensor(latents[None])
        _, pos_x = self._leader_rollout(z)
        w0 = np.zeros((1, latents.shape[0], self.model_y.latent))
        _, pos_y = self.rollout(z, w0)
        return pos_x.data[0], pos_y.data[0]


class DisentangledAdapter:
    """Joint model: optimize the agent-x block, sample the rest.

    Opponent samples cover the agent-y and free-noise blocks jointly, so
    every rollout decodes a full latent.
    """

    def __init__(self, model, past: np.ndarray, anchors: np.ndarray):
        if model.partition is None:
            raise ValueError("disentangled planning needs a partitioned latent")
        self.model = model
        p = np.asarray(past, dtype=np.float64)
        self.past = p.reshape(p.shape[-3] * p.shape[-2], p.shape[-1]) if p.ndim == 3 else p
        self.anchors = np.asarray(anchors, dtype=np.float64)
        part = model.partition
        self.d_x = part.z_x.stop - part.z_x.start
        self.d_rest = model.latent - self.d_x

    def init_latents(self, rng, n: int, k: int) -> np.ndarray:
        return rng.standard_normal((n, k, self.d_x))

    def sample_adversary(self, rng, m: int, k: int) -> np.ndarray:
        return rng.standard_normal((m, k, self.d_rest))

    def rollout(self, z: Tensor, w: np.ndarray):
        n, k = z.shape[0], z.shape[1]
        m = w.shape[0]
        b = m * n
        f = self.past.shape[0] // 2
        past = Tensor(np.broadcast_to(self.past, (b,) + self.past.shape).copy())
        ax = Tensor(np.broadcast_to(self.anchors[0], (b, 2)).copy())
        ay = Tensor(np.broadcast_to(self.anchors[1], (b, 2)).copy())
        seg_x, seg_y = [], []
        for i in range(k):
            full = concat([_tile_rows(z[:, i, :], m), Tensor(np.repeat(w[:, i, :], n, axis=0))], axis=1)
            fut = models.decode(self.model, past, full)
            seg_x.append(models.segment_positions(fut, ax))
            seg_y.append(models.segment_positions(fut, ay, agent_offset=f))
            ax = models.next_anchor(ax, fut)
            ay = models.next_anchor(ay, fut, agent_offset=f)
            past = models.chain_next_past(fut, agents=2)
        return concat(seg_x, axis=2), concat(seg_y, axis=2)

    def representative(self, latents: np.ndarray):
        w0 = np.zeros((1, latents.shape[0], self.d_rest))
        px, py = self.rollout(Tensor(latents[None]), w0)
        return px.data[0], py.data[0]


class SingleStepAdapter:
    """Action-space baseline: the "latents" are raw unit-box actions.

    The controlled agent rolls through the learned one-step model on
    tape; opponent samples are exploration action sequences pushed
    through the same model numerically, fixed for the whole plan.
    """

    def __init__(self, model, scenario: Scenario, pos, vel, start_t: int = 0):
        self.model = model
        self.scenario = scenario
        self.pos = np.asarray(pos, dtype=np.float64)  # (2, 2) both agents
        self.vel = np.asarray(vel, dtype=np.float64)
        self.start_t = start_t

    def init_latents(self, rng, n: int, k: int) -> np.ndarray:
        h = self.scenario.segment_length
        return 0.5 * rng.standard_normal((n, k, 2 * h))

    def sample_adversary(self, rng, m: int, k: int) -> np.ndarray:
        h = self.scenario.segment_length
        steps = k * h
        pos_y = np.empty((m, steps, 2))
        for j in range(m):
            acts = exploration_actions(self.scenario, rng, steps, start_t=self.start_t)
            rolled = models.single_step_rollout(
                self.model, self.pos[1][None], self.vel[1][None], self.scenario.obstacle_center, acts[None]
            )
            pos_y[j] = rolled.data[0]
        return np.transpose(pos_y, (0, 2, 1))  # (m, 2, steps)

    def rollout(self, z: Tensor, w: np.ndarray):
        n, k = z.shape[0], z.shape[1]
        m = w.shape[0]
        h = self.scenario.segment_length
        acts = z.reshape(n, k * h, 2).clip(-1.0, 1.0)
        rolled = models.single_step_rollout(
            self.model,
            Tensor(np.broadcast_to(self.pos[0], (n, 2)).copy()),
            Tensor(np.broadcast_to(self.vel[0], (n, 2)).copy()),
            self.scenario.obstacle_center,
            acts,
        )
        pos_x = rolled.transpose(0, 2, 1)  # (n, 2, steps)
        pos_y = Tensor(np.repeat(w, n, axis=0))
        return _tile_rows(pos_x, m), pos_y

    def representative(self, latents: np.ndarray):
        px, _ = self.rollout(Tensor(latents[None]), np.zeros((1, 2, latents.shape[0] * self.scenario.segment_length)))
        drift = models.single_step_rollout(
            self.model,
            self.pos[1][None],
            self.vel[1][None],
            self.scenario.obstacle_center,
            np.zeros((1, latents.shape[0] * self.scenario.segment_length, 2)),
        )
        return px.data[0], drift.data[0].T


class LinearAdapter:
    """Deterministic linear decoder: positions ``(2, steps) = (A z).reshape``.

    With a quadratic reward this makes the planner's optimum a
    least-squares solution, which is checkable in closed form.
    """

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.shape[0] % 2 != 0:
            raise ValueError("output rows must flatten to (2, steps)")
        self.steps = self.matrix.shape[0] // 2

    def init_latents(self, rng, n: int, k: int) -> np.ndarray:
        if k != 1:
            raise ValueError("the linear stub is single-segment")
        return rng.standard_normal((n, 1, self.matrix.shape[1]))

    def sample_adversary(self, rng, m: int, k: int) -> np.ndarray:
        return np.zeros((m, 0))

    def rollout(self, z: Tensor, w: np.ndarray):
        n = z.shape[0]
        m = w.shape[0]
        out = z[:, 0, :] @ Tensor(self.matrix.T)
        pos = out.reshape(n, 2, self.steps)
        return _tile_rows(pos, m), np.zeros((m * n, 2, self.steps))

    def representative(self, latents: np.ndarray):
        px, _ = self.rollout(Tensor(latents[None]), np.zeros((1, 0)))
        return px.data[0], np.zeros((2, self.steps))


# ---------------------------------------------------------------------------
# the optimizer
# ---------------------------------------------------------------------------


def _evaluate(adapter, reward_fn, risk, z_val: np.ndarray, adversary, m: int):
    n = z_val.shape[0]
    z = Tensor(z_val, requires_grad=True)
    pos_x, pos_y = adapter.rollout(z, adversary)
    rewards = reward_fn(pos_x, pos_y)
    obj = _cvar_columns(rewards, m, n, risk)
    total = -obj.sum()
    if not np.isfinite(total.data):
        raise FloatingPointError("plan objective diverged")
    backward(total)
    return obj.data.copy(), z.grad.copy()


def plan(adapter, reward_fn, risk: RiskConfig, cfg: PlanConfig) -> PlanResult:
    """Safeguarded gradient ascent of the CVaR objective over latents.

    Runs ``cfg.restarts`` independent ascents in one batched tape.  Each
    evaluation yields both the objective and its gradient; a restart that
    got worse is reverted to its previous point (reusing that point's
    gradient), its step size halved and its moments reset, so the
    recorded trace is non-decreasing per restart.
    """
    rng = np.random.default_rng(cfg.seed)
    z = adapter.init_latents(rng, cfg.restarts, cfg.segments)
    adversary = adapter.sample_adversary(rng, cfg.samples, cfg.segments)
    n = z.shape[0]
    lr = np.full(n, cfg.lr)
    m1 = np.zeros_like(z)
    m2 = np.zeros_like(z)
    steps = np.zeros(n, dtype=np.int64)
    b1, b2, eps = 0.9, 0.999, 1e-8

    trace = np.empty((n, cfg.iterations))
    prev_z = z.copy()
    prev_obj = np.full(n, -np.inf)
    prev_grad = np.zeros_like(z)
    for it in range(cfg.iterations):
        obj, grad = _evaluate(adapter, reward_fn, risk, z, adversary, cfg.samples)
        worse = obj < prev_obj
        if worse.any():
            z[worse] = prev_z[worse]
            grad[worse] = prev_grad[worse]
            obj[worse] = prev_obj[worse]
            lr[worse] *= 0.5
            m1[worse] = 0.0
            m2[worse] = 0.0
            steps[worse] = 0
        trace[:, it] = obj
        prev_z, prev_obj, prev_grad = z.copy(), obj, grad
        steps += 1
        m1 = b1 * m1 + (1.0 - b1) * grad
        m2 = b2 * m2 + (1.0 - b2) * grad * grad
        c1 = 1.0 - b1 ** steps.astype(np.float64)
        c2 = 1.0 - b2 ** steps.astype(np.float64)
        step = (m1 / c1[:, None, None]) / (np.sqrt(m2 / c2[:, None, None]) + eps)
        z = z - lr[:, None, None] * step

    best = int(np.argmax(prev_obj))
    latents = prev_z[best]
    # Re-evaluate the winner alone; this is the exact code path replay takes.
    final_obj, _ = _evaluate(adapter, reward_fn, risk, latents[None], adversary, cfg.samples)
    pos_x, pos_y = adapter.representative(latents)
    return PlanResult(
        latents, float(final_obj[0]), pos_x, pos_y, trace, adversary, risk, cfg
    )


def replay_objective(adapter, reward_fn, result: PlanResult) -> float:
    """Objective of ``result.latents`` against the stored opponent samples."""
    obj, _ = _evaluate(
        adapter, reward_fn, result.risk, result.latents[None], result.adversary, result.config.samples
    )
    return float(obj[0])


def plan_trace_csv(result: PlanResult) -> str:
    lines = ["iteration,restart,objective"]
    n, iters = result.trace.shape
    for it in range(iters):
        for i in range(n):
            lines.append(f"{it},{i},{float(result.trace[i, it])!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# saddle-point verification on quadratic games
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GameSpec:
    """Two-player quadratic game reached through linear latent maps.

    Cost ``C(u, w) = u'Pu - w'Qw + u'Rw + bu'u + bw'w`` with ``P`` and
    ``Q`` positive definite; actions ``u = A zx (+ E zy)``, ``w = B zy``.
    A nonzero ``E`` entangles the minimizer's action with the maximizer's
    latent, violating the block-structure hypothesis.
    """

    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    A: np.ndarray
    B: np.ndarray
    bu: np.ndarray
    bw: np.ndarray
    E: np.ndarray | None = None


@dataclass
class SaddleReport:
    game: GameSpec
    z_x: np.ndarray
    z_y: np.ndarray
    u: np.ndarray
    w: np.ndarray
    grad_u_norm: float
    grad_w_norm: float
    hessian_ok: bool
    closed_u: np.ndarray
    closed_w: np.ndarray
    mapped_error: float
    hypothesis_violated: bool
    converged: bool
    iterations: int


def closed_form_saddle(game: GameSpec) -> tuple[np.ndarray, np.ndarray]:
    """Unique stationary point of the quadratic cost in action space."""
    du, dw = game.P.shape[0], game.Q.shape[0]
    top = np.concatenate([2.0 * game.P, game.R], axis=1)
    bot = np.concatenate([game.R.T, -2.0 * game.Q], axis=1)
    sol = np.linalg.solve(np.concatenate([top, bot], axis=0), -np.concatenate([game.bu, game.bw]))
    return sol[:du], sol[du:]


def _game_cost(game: GameSpec, zx: Tensor, zy: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    u = zx @ Tensor(game.A.T)
    if game.E is not None:
        u = u + zy @ Tensor(game.E.T)
    w = zy @ Tensor(game.B.T)
    cost = (
        ((u @ Tensor(game.P)) * u).sum()
        - ((w @ Tensor(game.Q)) * w).sum()
        + ((u @ Tensor(game.R)) * w).sum()
        + (u * Tensor(game.bu)).sum()
        + (w * Tensor(game.bw)).sum()
    )
    return cost, u, w


def verify_saddle(
    game: GameSpec, lr: float = 0.05, max_iterations: int = 200000, tol: float = 1e-7, seed: int = 0
) -> SaddleReport:
    """Simultaneous gradient descent-ascent in latent space plus checks.

    Reports the mapped action point, the action-space gradient norms
    there, Hessian block sign conditions, and the distance to the
    closed-form saddle.  With an entangled map the saddle guarantee is
    void: the report flags it instead of failing.
    """
    rng = np.random.default_rng(seed)
    entangled = game.E is not None and np.any(game.E != 0.0)
    zx = rng.standard_normal(game.A.shape[1])[None]
    zy = rng.standard_normal(game.B.shape[1])[None]
    it = 0
    converged = False
    while it < max_iterations:
        txs = Tensor(zx, requires_grad=True)
        tys = Tensor(zy, requires_grad=True)
        cost, _, _ = _game_cost(game, txs, tys)
        backward(cost)
        gx, gy = txs.grad, tys.grad
        zx = zx - lr * gx
        zy = zy + lr * gy
        it += 1
        if max(np.abs(zx).max(), np.abs(zy).max()) > 1e8:
            # Entangled games can make the descent-ascent field repulsive;
            # stop before the quadratic cost overflows.
            break
        if max(np.abs(gx).max(), np.abs(gy).max()) < tol:
            converged = True
            break
    if not converged and not entangled:
        raise RuntimeError(f"saddle search did not converge in {max_iterations} iterations")

    u = game.A @ zx[0] + (game.E @ zy[0] if game.E is not None else 0.0)
    w = game.B @ zy[0]
    grad_u = 2.0 * game.P @ u + game.R @ w + game.bu
    grad_w = -2.0 * game.Q @ w + game.R.T @ u + game.bw
    hessian_ok = bool(
        np.all(np.linalg.eigvalsh(2.0 * game.P) > 0.0) and np.all(np.linalg.eigvalsh(-2.0 * game.Q) < 0.0)
    )
    cu, cw = closed_form_saddle(game)
    return SaddleReport(
        game=game,
        z_x=zx[0],
        z_y=zy[0],
        u=u,
        w=w,
        grad_u_norm=float(np.linalg.norm(grad_u)),
        grad_w_norm=float(np.linalg.norm(grad_w)),
        hessian_ok=hessian_ok,
        closed_u=cu,
        closed_w=cw,
        mapped_error=float(np.linalg.norm(u - cu) + np.linalg.norm(w - cw)),
        hypothesis_violated=entangled,
        converged=converged,
        iterations=it,
    )


def _well_conditioned(rng, dim: int, lo: float = 0.5, hi: float = 1.5) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q @ np.diag(rng.uniform(lo, hi, dim)) @ q.T


def _invertible(rng, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q @ np.diag(rng.uniform(0.7, 1.3, dim))


def saddle_battery(n_games: int, seed: int, dim: int = 3) -> list[GameSpec]:
    """Random well-conditioned games with square invertible latent maps."""
    rng = np.random.default_rng(seed)
    games = []
    for _ in range(n_games):
        games.append(
            GameSpec(
                P=_well_conditioned(rng, dim),
                Q=_well_conditioned(rng, dim),
                R=0.3 * rng.standard_normal((dim, dim)),
                A=_invertible(rng, dim),
                B=_invertible(rng, dim),
                bu=rng.standard_normal(dim),
                bw=rng.standard_normal(dim),
            )
        )
    return games

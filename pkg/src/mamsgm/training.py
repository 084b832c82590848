"""Training objectives and loops for segment models and MLP baselines.

Segment models train on overlapping (past, future) window pairs cut from
recorded trajectories at every valid offset.  The base objective is the
usual reconstruction-plus-weighted-KL bound; the disentangled variant can
add a mutual-information term (auxiliary per-agent encoders predicting
their own latent block) and a cross-block gradient penalty that punishes
one agent's output channels for responding to the other agent's latent
block.

Held-out splits are made at the trajectory level so no evaluation window
overlaps a training window.  All loops draw randomness from a single
generator seeded by the config, which makes reruns bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import models
from .env import AGENT_X, AGENT_Y, FEATURES_PER_AGENT, Dataset, segment_features, segment_start_range
from .optim import Adam
from .tensor import Tensor, backward, kl_diag_gaussian

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainReport",
    "PairSet",
    "TransitionSet",
    "assemble_pairs",
    "split_trajectories",
    "conditional_inputs",
    "joint_inputs",
    "transitions",
    "transition_contact_mask",
    "elbo_terms",
    "info_terms",
    "penalty_terms",
    "cross_jacobian_norms",
    "heldout_reconstruction",
    "train_segment_model",
    "train_transition_model",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    kl_weight: float = 0.005
    mi_weight: float = 0.0
    penalty_weight: float = 0.0
    penalty_step: float = 1e-3
    heldout_fraction: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    recon: float
    kl: float
    aux: float
    heldout: float


@dataclass
class TrainReport:
    kind: str
    rows: list = field(default_factory=list)

    def csv(self) -> str:
        lines = ["epoch,loss,recon,kl,aux,heldout"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.loss!r},{r.recon!r},{r.kl!r},{r.aux!r},{r.heldout!r}")
        return "\n".join(lines) + "\n"

    @property
    def final(self) -> EpochStats:
        return self.rows[-1]


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------


@dataclass
class PairSet:
    """All segment pairs of a dataset: past/future ``(N, 2, 6, H)``."""

    past: np.ndarray
    future: np.ndarray
    anchors: np.ndarray  # (N, 2, 2)
    traj_index: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.past.shape[0]


def assemble_pairs(dataset: Dataset) -> PairSet:
    scenario = dataset.scenario
    H = scenario.segment_length
    pasts, futures, anchors, owners = [], [], [], []
    for i, traj in enumerate(dataset.trajectories):
        for t0 in segment_start_range(len(traj), H):
            p, f, a = segment_features(traj, t0, scenario)
            pasts.append(p)
            futures.append(f)
            anchors.append(a)
            owners.append(i)
    return PairSet(
        np.stack(pasts), np.stack(futures), np.stack(anchors), np.asarray(owners, dtype=np.int64)
    )


def split_trajectories(pairs: PairSet, n_traj: int, heldout_fraction: float):
    """Train/held-out pair indices, split on whole trajectories (tail held)."""
    if heldout_fraction <= 0.0:
        return np.arange(len(pairs)), np.empty(0, dtype=np.int64)
    n_held = max(1, int(round(heldout_fraction * n_traj)))
    cutoff = n_traj - n_held
    train = np.flatnonzero(pairs.traj_index < cutoff)
    held = np.flatnonzero(pairs.traj_index >= cutoff)
    return train, held


def conditional_inputs(pairs: PairSet, agent: int):
    """Decoder past, encoder future, and target arrays for one agent.

    The follower model (agent y) decodes from both pasts plus the leader's
    future, which at plan time is the leader model's own prediction.
    """
    if agent == AGENT_X:
        dec = pairs.past[:, AGENT_X]
    elif agent == AGENT_Y:
        dec = np.concatenate(
            [pairs.past[:, AGENT_X], pairs.past[:, AGENT_Y], pairs.future[:, AGENT_X]], axis=1
        )
    else:
        raise ValueError(f"unknown agent {agent!r}")
    fut = pairs.future[:, agent]
    return dec, fut, fut


def joint_inputs(pairs: PairSet):
    """Stacked two-agent channels ``(N, 12, H)`` for the disentangled model."""
    n, _, f, h = pairs.past.shape
    dec = pairs.past.reshape(n, 2 * f, h)
    fut = pairs.future.reshape(n, 2 * f, h)
    return dec, fut, fut


@dataclass
class TransitionSet:
    """Per-step supervision rows pooled over both agents.

    ``forward_in`` is ``(v, obstacle vector, action)`` and ``forward_target``
    the state residual ``(dpos, dvel)``; ``inverse_in`` is
    ``(v_t, v_{t+1}, dpos, obstacle vector)`` with the applied action as
    target.  Layouts match the corresponding model forward helpers.
    """

    forward_in: np.ndarray  # (M, 6)
    forward_target: np.ndarray  # (M, 4)
    inverse_in: np.ndarray  # (M, 8)
    inverse_target: np.ndarray  # (M, 2)
    traj_index: np.ndarray  # (M,)

    def __len__(self) -> int:
        return self.forward_in.shape[0]


def transition_contact_mask(dataset: Dataset, margin: float = 0.1) -> np.ndarray:
    """True where the source state's disc is within ``margin`` of an obstacle.

    Row order matches ``transitions``, so the mask splits that table into
    contact-affected and free-space subsets.
    """
    sc = dataset.scenario
    masks = []
    for traj in dataset.trajectories:
        for agent in (AGENT_X, AGENT_Y):
            p = traj.positions[:-1, agent]
            near = np.zeros(p.shape[0], dtype=bool)
            for box in sc.obstacles:
                q = np.stack([box.closest_point(pi) for pi in p])
                near |= np.hypot(*(p - q).T) < sc.agent_radius + margin
            masks.append(near)
    return np.concatenate(masks)


def transitions(dataset: Dataset) -> TransitionSet:
    center = dataset.scenario.obstacle_center
    fin, ftg, vin, vtg, owners = [], [], [], [], []
    for i, traj in enumerate(dataset.trajectories):
        p, v, a = traj.positions, traj.velocities, traj.actions
        for agent in (AGENT_X, AGENT_Y):
            obsvec = center - p[:-1, agent]
            dpos = p[1:, agent] - p[:-1, agent]
            dvel = v[1:, agent] - v[:-1, agent]
            fin.append(np.concatenate([v[:-1, agent], obsvec, a[:-1, agent]], axis=1))
            ftg.append(np.concatenate([dpos, dvel], axis=1))
            vin.append(np.concatenate([v[:-1, agent], v[1:, agent], dpos, obsvec], axis=1))
            vtg.append(a[:-1, agent])
            owners.append(np.full(len(traj) - 1, i, dtype=np.int64))
    return TransitionSet(
        np.concatenate(fin),
        np.concatenate(ftg),
        np.concatenate(vin),
        np.concatenate(vtg),
        np.concatenate(owners),
    )


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


@dataclass
class ElboTerms:
    loss: Tensor
    z: Tensor
    recon: Tensor
    kl: Tensor


def elbo_terms(model, dec_past, enc_future, target, eps, kl_weight: float) -> ElboTerms:
    """Reconstruction MSE plus ``kl_weight`` times the batch-mean KL."""
    mu, sigma = models.encode(model, enc_future)
    z = models.reparameterize(mu, sigma, eps)
    out = models.decode(model, dec_past, z)
    err = out - (target if isinstance(target, Tensor) else Tensor(np.asarray(target)))
    recon = (err * err).mean()
    kl = kl_diag_gaussian(mu, sigma).mean()
    return ElboTerms(recon + kl * kl_weight, z, recon, kl)


def info_terms(info_x, info_y, z: Tensor, enc_future: Tensor, partition) -> Tensor:
    """Mutual-information surrogate for the disentangled latent.

    Each auxiliary encoder sees only its own agent's future channels and
    regresses the sampled latent block; the error backpropagates into the
    main encoder too, pulling each block toward what that agent alone can
    explain.
    """
    f = FEATURES_PER_AGENT
    px = models.info_encode(info_x, enc_future[:, 0:f, :])
    py = models.info_encode(info_y, enc_future[:, f : 2 * f, :])
    ex = px - z[:, partition.z_x]
    ey = py - z[:, partition.z_y]
    return (ex * ex).mean() + (ey * ey).mean()


def _block_probe(z: Tensor, block: slice, probe: np.ndarray, step: float) -> Tensor:
    direction = np.zeros(z.shape)
    direction[:, block] = probe
    return z + Tensor(direction * step)


def penalty_terms(model, dec_past, z: Tensor, probes, step: float) -> Tensor:
    """Stochastic estimate of the squared cross-block Jacobian norms.

    ``probes`` is a pair of standard-normal draws, one per latent block.
    A unit-covariance probe ``u`` gives ``E||J u||^2 = ||J||_F^2``, so the
    batch mean of the squared finite-difference responses estimates how
    strongly agent x's output channels react to the agent-y block and vice
    versa.  Both decoder evaluations stay on tape, so the term is
    differentiable and trainable as-is.
    """
    part = model.partition
    f = FEATURES_PER_AGENT
    b = z.shape[0]
    width = f * model.segment_length
    base = models.decode(model, dec_past, z)
    d_y = (models.decode(model, dec_past, _block_probe(z, part.z_y, probes[0], step)) - base) / step
    d_x = (models.decode(model, dec_past, _block_probe(z, part.z_x, probes[1], step)) - base) / step
    cross_x = d_y[:, 0:f, :].reshape(b, width)
    cross_y = d_x[:, f : 2 * f, :].reshape(b, width)
    return (cross_x * cross_x).sum(axis=1).mean() + (cross_y * cross_y).sum(axis=1).mean()


def cross_jacobian_norms(model, past: np.ndarray, z_val: np.ndarray) -> tuple[float, float]:
    """Exact Frobenius norms of the cross-agent Jacobian blocks at one point.

    Runs one reverse pass per output entry, so this is a reporting and
    verification tool, not a training path.  Returns
    ``(||d out_x / d z_y||_F, ||d out_y / d z_x||_F)``.
    """
    part = model.partition
    if part is None:
        raise ValueError("cross_jacobian_norms requires a disentangled model")
    f = FEATURES_PER_AGENT
    H = model.segment_length
    past_b = np.asarray(past, dtype=np.float64).reshape(1, model.dec_in, H)
    sq_xy = 0.0
    sq_yx = 0.0
    for c in range(2 * f):
        for t in range(H):
            z = Tensor(np.asarray(z_val, dtype=np.float64), requires_grad=True)
            out = models.decode(model, Tensor(past_b), z.reshape(1, model.latent))
            backward(out[0:1, c : c + 1, t : t + 1].sum())
            row = z.grad
            if c < f:
                sq_xy += float(np.sum(row[part.z_y] ** 2))
            else:
                sq_yx += float(np.sum(row[part.z_x] ** 2))
    return math.sqrt(sq_xy), math.sqrt(sq_yx)


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------


def heldout_reconstruction(model, dec_past, enc_future, target, chunk: int = 512) -> float:
    """Posterior-mean reconstruction MSE, batched without the tape."""
    n = dec_past.shape[0]
    if n == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        mu, _ = models.encode(model, Tensor(enc_future[lo:hi]))
        out = models.decode(model, Tensor(dec_past[lo:hi]), mu)
        total += float(np.sum((out.data - target[lo:hi]) ** 2))
    return total / float(np.prod(target.shape))


def _check_finite(value: float, kind: str, epoch: int, batch: int):
    if not np.isfinite(value):
        raise FloatingPointError(f"{kind} loss diverged at epoch {epoch}, batch {batch}")


def train_segment_model(model, dataset: Dataset, config: TrainConfig, info_pair=None) -> TrainReport:
    """Fit a segment model in place; returns the per-epoch report.

    ``info_pair`` supplies the two auxiliary encoders when
    ``config.mi_weight`` is nonzero; their parameters train jointly with
    the model's.
    """
    pairs = assemble_pairs(dataset)
    if model.variant == "disentangled":
        dec, fut, target = joint_inputs(pairs)
    elif model.variant == "conditional-x":
        dec, fut, target = conditional_inputs(pairs, AGENT_X)
    elif model.variant == "conditional-y":
        dec, fut, target = conditional_inputs(pairs, AGENT_Y)
    else:
        raise ValueError(f"unknown variant {model.variant!r}")
    if config.mi_weight > 0.0 and info_pair is None:
        raise ValueError("mi_weight > 0 requires the auxiliary encoder pair")
    if config.penalty_weight > 0.0 and model.partition is None:
        raise ValueError("penalty_weight > 0 requires a disentangled model")

    train_idx, held_idx = split_trajectories(pairs, len(dataset), config.heldout_fraction)
    params = list(model.parameters())
    if info_pair is not None:
        params += info_pair[0].parameters() + info_pair[1].parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    part = model.partition

    report = TrainReport(kind=model.variant)
    n = train_idx.shape[0]
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(n)]
        sums = np.zeros(4)
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            eps = rng.standard_normal((idx.shape[0], model.latent))
            dec_b = Tensor(dec[idx])
            fut_b = Tensor(fut[idx])
            terms = elbo_terms(model, dec_b, fut_b, target[idx], eps, config.kl_weight)
            loss = terms.loss
            aux = 0.0
            if config.mi_weight > 0.0:
                mi = info_terms(info_pair[0], info_pair[1], terms.z, fut_b, part)
                loss = loss + mi * config.mi_weight
                aux += config.mi_weight * float(mi.data)
            if config.penalty_weight > 0.0:
                width = part.z_y.stop - part.z_y.start
                probes = (
                    rng.standard_normal((idx.shape[0], width)),
                    rng.standard_normal((idx.shape[0], width)),
                )
                pen = penalty_terms(model, dec_b, terms.z, probes, config.penalty_step)
                loss = loss + pen * config.penalty_weight
                aux += config.penalty_weight * float(pen.data)
            _check_finite(float(loss.data), model.variant, epoch, batches)
            opt.zero_grad()
            backward(loss)
            opt.step()
            sums += (float(loss.data), float(terms.recon.data), float(terms.kl.data), aux)
            batches += 1
        held = heldout_reconstruction(model, dec[held_idx], fut[held_idx], target[held_idx])
        mean = sums / batches
        report.rows.append(EpochStats(epoch, float(mean[0]), float(mean[1]), float(mean[2]), float(mean[3]), held))
    return report


def train_transition_model(model, dataset: Dataset, config: TrainConfig, kind: str) -> TrainReport:
    """Fit the single-step forward model or the inverse model in place."""
    table = transitions(dataset)
    if kind == "single-step":
        inputs, targets = table.forward_in, table.forward_target
    elif kind == "inverse":
        inputs, targets = table.inverse_in, table.inverse_target
    else:
        raise ValueError(f"unknown transition model kind {kind!r}")
    if model.sizes[0] != inputs.shape[1]:
        raise ValueError(f"model expects {model.sizes[0]} inputs, table has {inputs.shape[1]}")

    if config.heldout_fraction > 0.0:
        n_held = max(1, int(round(config.heldout_fraction * len(dataset))))
        cutoff = len(dataset) - n_held
        train_idx = np.flatnonzero(table.traj_index < cutoff)
        held_idx = np.flatnonzero(table.traj_index >= cutoff)
    else:
        train_idx, held_idx = np.arange(len(table)), np.empty(0, dtype=np.int64)

    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    report = TrainReport(kind=kind)
    n = train_idx.shape[0]
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(n)]
        total = 0.0
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            err = models.mlp_forward(model, Tensor(inputs[idx])) - Tensor(targets[idx])
            loss = (err * err).mean()
            _check_finite(float(loss.data), kind, epoch, batches)
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += float(loss.data)
            batches += 1
        if held_idx.shape[0]:
            pred = models.mlp_forward(model, Tensor(inputs[held_idx])).data
            held = float(np.mean((pred - targets[held_idx]) ** 2))
        else:
            held = float("nan")
        mean = total / batches
        report.rows.append(EpochStats(epoch, mean, mean, 0.0, 0.0, held))
    return report

"""Segment-level generative models and the small MLP models around them.

The core model is a conditional VAE over fixed-length trajectory segments:
a causal-convolution encoder maps a future segment to a diagonal Gaussian
over a latent code, and a gated causal-convolution decoder maps the past
segment plus a latent draw back to a predicted future segment.

Variants
--------
``conditional-x``   per-agent model, past = own features (6 channels).
``conditional-y``   reactive model, past = both agents' pasts plus the
                    other agent's already-predicted future (18 channels).
``disentangled``    joint model over both agents (12 channels in and out)
                    whose latent splits into an agent-x block, an agent-y
                    block, and a free noise block.

Alongside: per-agent information encoders used by the mutual-information
training objective, a single-step MLP dynamics baseline, and the inverse
dynamics model used to track planned segments at execution time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import FEATURES_PER_AGENT
from .tensor import Tensor, concat, conv1d_causal, gated_activation

__all__ = [
    "LatentPartition",
    "SegmentModel",
    "InfoEncoder",
    "MLP",
    "make_segment_model",
    "make_info_encoder",
    "make_single_step_model",
    "make_inverse_model",
    "encode",
    "reparameterize",
    "decode",
    "info_encode",
    "mlp_forward",
    "chain_next_past",
    "next_anchor",
    "segment_positions",
    "freeze_probe",
    "predict_single_step",
    "single_step_rollout",
    "inverse_action",
    "model_hyper",
    "model_from_checkpoint",
]

# sigma is exp(log sigma) with log sigma clamped here, flooring it at
# ~1e-6 without killing the gradient anywhere reachable.
_LOG_SIGMA_CLIP = 13.8

_DECODER_DILATIONS = (1, 2, 4)
_ENCODER_DILATIONS = (1, 2)


@dataclass(frozen=True)
class LatentPartition:
    """Index blocks of a disentangled latent: agent x, agent y, free noise."""

    z_x: slice
    z_y: slice
    noise: slice

    @staticmethod
    def thirds(latent: int) -> "LatentPartition":
        if latent % 3 != 0:
            raise ValueError("disentangled latent size must split into three blocks")
        b = latent // 3
        return LatentPartition(slice(0, b), slice(b, 2 * b), slice(2 * b, latent))

    def sizes(self) -> tuple[int, int, int]:
        return (
            self.z_x.stop - self.z_x.start,
            self.z_y.stop - self.z_y.start,
            self.noise.stop - self.noise.start,
        )


@dataclass
class SegmentModel:
    variant: str
    channels: int
    latent: int
    segment_length: int
    enc_in: int
    dec_in: int
    dec_out: int
    partition: LatentPartition | None = None
    params: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


@dataclass
class InfoEncoder:
    channels: int
    out: int
    segment_length: int
    params: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


@dataclass
class MLP:
    """Plain tanh MLP; ``residual`` marks the zero-initialized output head."""

    sizes: tuple
    params: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def _conv_param(rng, c_out, c_in, k):
    scale = 1.0 / np.sqrt(c_in * k)
    return Tensor(rng.normal(0.0, scale, size=(c_out, c_in, k)), requires_grad=True)


def _mat_param(rng, n_out, n_in):
    scale = 1.0 / np.sqrt(n_in)
    return Tensor(rng.normal(0.0, scale, size=(n_in, n_out)), requires_grad=True)


def _bias(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def make_segment_model(variant: str, channels: int, latent: int, segment_length: int, seed: int) -> SegmentModel:
    f = FEATURES_PER_AGENT
    if variant == "conditional-x":
        enc_in, dec_in, dec_out, partition = f, f, f, None
    elif variant == "conditional-y":
        enc_in, dec_in, dec_out, partition = f, 3 * f, f, None
    elif variant == "disentangled":
        enc_in, dec_in, dec_out = 2 * f, 2 * f, 2 * f
        partition = LatentPartition.thirds(latent)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    rng = np.random.default_rng(seed)
    p = {}
    # Encoder: two dilated causal conv layers, then a linear head off the
    # last timestep producing (mu, log sigma).
    c = channels
    p["enc.conv1.w"] = _conv_param(rng, c, enc_in, 2)
    p["enc.conv1.b"] = _bias((c, 1))
    p["enc.conv2.w"] = _conv_param(rng, c, c, 2)
    p["enc.conv2.b"] = _bias((c, 1))
    p["enc.head.w"] = _mat_param(rng, 2 * latent, c)
    p["enc.head.b"] = _bias((2 * latent,))
    # Decoder: three gated causal conv layers conditioned on the latent
    # through per-layer channel biases, then a 1x1 output conv.
    c_in = dec_in
    for i, _d in enumerate(_DECODER_DILATIONS, start=1):
        p[f"dec.l{i}.wf"] = _conv_param(rng, c, c_in, 2)
        p[f"dec.l{i}.wg"] = _conv_param(rng, c, c_in, 2)
        p[f"dec.l{i}.vf"] = _mat_param(rng, c, latent)
        p[f"dec.l{i}.vg"] = _mat_param(rng, c, latent)
        p[f"dec.l{i}.bf"] = _bias((c, 1))
        p[f"dec.l{i}.bg"] = _bias((c, 1))
        c_in = c
    p["dec.out.w"] = _conv_param(rng, dec_out, c, 1)
    p["dec.out.b"] = _bias((dec_out, 1))
    return SegmentModel(variant, channels, latent, segment_length, enc_in, dec_in, dec_out, partition, p)


def make_info_encoder(channels: int, out: int, segment_length: int, seed: int) -> InfoEncoder:
    rng = np.random.default_rng(seed)
    f = FEATURES_PER_AGENT
    p = {
        "conv1.w": _conv_param(rng, channels, f, 2),
        "conv1.b": _bias((channels, 1)),
        "conv2.w": _conv_param(rng, channels, channels, 2),
        "conv2.b": _bias((channels, 1)),
        "head.w": _mat_param(rng, out, channels),
        "head.b": _bias((out,)),
    }
    return InfoEncoder(channels, out, segment_length, p)


def _make_mlp(sizes, seed, zero_last=False) -> MLP:
    rng = np.random.default_rng(seed)
    p = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        if zero_last and i == len(sizes) - 1:
            p[f"w{i}"] = Tensor(np.zeros((a, b)), requires_grad=True)
        else:
            p[f"w{i}"] = _mat_param(rng, b, a)
        p[f"b{i}"] = _bias((b,))
    return MLP(tuple(sizes), p)


def make_single_step_model(seed: int, hidden: int = 64) -> MLP:
    # Input (v, obstacle vector, action), output residual (dpos, dvel).
    # Zero-initialized head makes the untrained model the identity map.
    return _make_mlp((6, hidden, hidden, hidden, 4), seed, zero_last=True)


def make_inverse_model(seed: int, hidden: int = 64) -> MLP:
    # Input (v_t, v_{t+1}, p_{t+1} - p_t, obstacle vector at t) -> action.
    return _make_mlp((8, hidden, hidden, 2), seed)


# ---------------------------------------------------------------------------
# forward paths
# ---------------------------------------------------------------------------


def _wrap_batch(x) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 2:
        return t.reshape((1,) + t.shape), True
    return t, False


def _conv_tower(params, prefix, x, dilations):
    h = x
    for i, d in enumerate(dilations, start=1):
        h = conv1d_causal(h, params[f"{prefix}conv{i}.w"], dilation=d) + params[f"{prefix}conv{i}.b"]
        h = h.tanh()
    return h


def encode(model: SegmentModel, future) -> tuple[Tensor, Tensor]:
    """Posterior parameters ``(mu, sigma)`` from a future segment."""
    x, squeeze = _wrap_batch(future)
    h = _conv_tower(model.params, "enc.", x, _ENCODER_DILATIONS)
    h_last = h[:, :, -1]
    out = h_last @ model.params["enc.head.w"] + model.params["enc.head.b"]
    mu = out[:, : model.latent]
    sigma = out[:, model.latent :].clip(-_LOG_SIGMA_CLIP, _LOG_SIGMA_CLIP).exp()
    if squeeze:
        return mu[0], sigma[0]
    return mu, sigma


def reparameterize(mu: Tensor, sigma: Tensor, eps) -> Tensor:
    """Differentiable posterior sample ``mu + sigma * eps``."""
    e = eps if isinstance(eps, Tensor) else Tensor(np.asarray(eps, dtype=np.float64))
    return mu + sigma * e


def info_encode(enc: InfoEncoder, segment) -> Tensor:
    x, squeeze = _wrap_batch(segment)
    h = _conv_tower(enc.params, "", x, _ENCODER_DILATIONS)
    out = h[:, :, -1] @ enc.params["head.w"] + enc.params["head.b"]
    return out[0] if squeeze else out


def decode(model: SegmentModel, past, z) -> Tensor:
    """Predicted future segment from past features and a latent code.

    ``past`` is ``(B, dec_in, H)`` (or unbatched), ``z`` is ``(B, latent)``.
    The latent enters every gated layer as a per-channel bias on both the
    filter and the gate path.
    """
    x, squeeze = _wrap_batch(past)
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    if zt.ndim == 1:
        zt = zt.reshape(1, zt.shape[0])
    p = model.params
    h = x
    for i, d in enumerate(_DECODER_DILATIONS, start=1):
        zf = (zt @ p[f"dec.l{i}.vf"]).reshape(zt.shape[0], model.channels, 1)
        zg = (zt @ p[f"dec.l{i}.vg"]).reshape(zt.shape[0], model.channels, 1)
        filt = conv1d_causal(h, p[f"dec.l{i}.wf"], dilation=d) + p[f"dec.l{i}.bf"] + zf
        gate = conv1d_causal(h, p[f"dec.l{i}.wg"], dilation=d) + p[f"dec.l{i}.bg"] + zg
        h = gated_activation(filt, gate)
    out = conv1d_causal(h, p["dec.out.w"]) + p["dec.out.b"]
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# segment chaining
# ---------------------------------------------------------------------------


def chain_next_past(fut: Tensor, agents: int = 1) -> Tensor:
    """Re-anchor a predicted future so it can serve as the next past window.

    The offset-position rows are shifted so the window's first position is
    zero again; velocity and obstacle rows pass through unchanged.
    """
    parts = []
    f = FEATURES_PER_AGENT
    for a in range(agents):
        base = a * f
        dpos = fut[:, base : base + 2, :]
        parts.append(dpos - dpos[:, :, 0:1])
        parts.append(fut[:, base + 2 : base + f, :])
    return concat(parts, axis=1)


def next_anchor(anchor: Tensor, fut: Tensor, agent_offset: int = 0) -> Tensor:
    """Absolute position of the next window's first step."""
    return anchor + fut[:, agent_offset : agent_offset + 2, 0]


def segment_positions(fut: Tensor, anchor: Tensor, agent_offset: int = 0) -> Tensor:
    """Absolute positions ``(B, 2, H)`` of one agent in a predicted segment."""
    return fut[:, agent_offset : agent_offset + 2, :] + anchor.reshape(anchor.shape[0], 2, 1)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------


def freeze_probe(model: SegmentModel, past: np.ndarray, frozen: str, n_samples: int, seed: int) -> tuple[float, float]:
    """Across-sample position variance per agent with one latent block frozen.

    Freezes the named agent block *and* the noise block at a single prior
    draw, resamples the other agent's block, decodes, and returns the mean
    variance of predicted positions ``(var_x, var_y)``.  A disentangled
    model should show a small variance for the frozen agent relative to
    the resampled one.
    """
    if model.partition is None:
        raise ValueError("freeze_probe requires a disentangled model")
    rng = np.random.default_rng(seed)
    part = model.partition
    base = rng.standard_normal(model.latent)
    resample = part.z_y if frozen == "x" else part.z_x
    zs = np.tile(base, (n_samples, 1))
    width = resample.stop - resample.start
    zs[:, resample] = rng.standard_normal((n_samples, width))
    past_b = np.broadcast_to(past, (n_samples,) + past.shape)
    fut = decode(model, Tensor(past_b), Tensor(zs)).data
    f = FEATURES_PER_AGENT
    var_x = float(fut[:, 0:2, :].var(axis=0).mean())
    var_y = float(fut[:, f : f + 2, :].var(axis=0).mean())
    return var_x, var_y


# ---------------------------------------------------------------------------
# MLPs: single-step dynamics and inverse dynamics
# ---------------------------------------------------------------------------


def mlp_forward(mlp: MLP, x) -> Tensor:
    h, squeeze = (x, False)
    if not isinstance(h, Tensor):
        h = Tensor(np.asarray(h, dtype=np.float64))
    if h.ndim == 1:
        h, squeeze = h.reshape(1, h.shape[0]), True
    n_layers = len(mlp.sizes) - 1
    for i in range(1, n_layers + 1):
        h = h @ mlp.params[f"w{i}"] + mlp.params[f"b{i}"]
        if i < n_layers:
            h = h.tanh()
    return h[0] if squeeze else h


def predict_single_step(model: MLP, pos, vel, obs_center, action):
    """One residual step: returns taped ``(pos', vel')`` tensors.

    ``pos``/``vel``/``action`` are ``(B, 2)`` tensors or arrays; the
    obstacle vector input is recomputed from the current position.
    """
    pos_t = pos if isinstance(pos, Tensor) else Tensor(np.asarray(pos, dtype=np.float64))
    vel_t = vel if isinstance(vel, Tensor) else Tensor(np.asarray(vel, dtype=np.float64))
    act_t = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float64))
    obsvec = Tensor(np.asarray(obs_center, dtype=np.float64)) - pos_t
    delta = mlp_forward(model, concat([vel_t, obsvec, act_t], axis=1))
    return pos_t + delta[:, 0:2], vel_t + delta[:, 2:4]


def single_step_rollout(model: MLP, pos0, vel0, obs_center, actions) -> Tensor:
    """Iterate the baseline open loop; returns positions ``(B, n, 2)``.

    ``actions`` is ``(B, n, 2)`` (a Tensor keeps the rollout on tape).
    """
    acts = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, dtype=np.float64))
    pos = pos0 if isinstance(pos0, Tensor) else Tensor(np.asarray(pos0, dtype=np.float64))
    vel = vel0 if isinstance(vel0, Tensor) else Tensor(np.asarray(vel0, dtype=np.float64))
    out = []
    n = acts.shape[1]
    for t in range(n):
        pos, vel = predict_single_step(model, pos, vel, obs_center, acts[:, t, :])
        out.append(pos.reshape(pos.shape[0], 1, 2))
    return concat(out, axis=1)


def inverse_action(model: MLP, v_t, v_next, dpos, obsvec) -> np.ndarray:
    """Action that should realize the requested transition, box-clipped."""
    x = np.concatenate(
        [np.atleast_2d(v_t), np.atleast_2d(v_next), np.atleast_2d(dpos), np.atleast_2d(obsvec)], axis=1
    )
    raw = mlp_forward(model, Tensor(x)).data
    return np.clip(raw, -1.0, 1.0)


# ---------------------------------------------------------------------------
# checkpoint glue
# ---------------------------------------------------------------------------


def model_hyper(model) -> dict:
    if isinstance(model, SegmentModel):
        return {
            "kind": "segment",
            "variant": model.variant,
            "channels": model.channels,
            "latent": model.latent,
            "segment_length": model.segment_length,
        }
    if isinstance(model, InfoEncoder):
        return {"kind": "info", "channels": model.channels, "out": model.out, "segment_length": model.segment_length}
    if isinstance(model, MLP):
        return {"kind": "mlp", "sizes": list(model.sizes)}
    raise TypeError(f"unsupported model {type(model).__name__}")


def _assign(target_params: dict, tensors: dict, prefix: str = ""):
    for name, param in target_params.items():
        key = prefix + name
        if key not in tensors:
            raise ValueError(f"checkpoint is missing tensor {key!r}")
        data = tensors[key]
        if tuple(data.shape) != tuple(param.data.shape):
            raise ValueError(f"shape mismatch for {key!r}")
        param.data = np.array(data, dtype=np.float64)


def model_from_checkpoint(hyper: dict, tensors: dict, prefix: str = ""):
    """Rebuild a model from a checkpoint hyperparameter block and tensors."""
    kind = hyper["kind"]
    if kind == "segment":
        model = make_segment_model(hyper["variant"], hyper["channels"], hyper["latent"], hyper["segment_length"], 0)
    elif kind == "info":
        model = make_info_encoder(hyper["channels"], hyper["out"], hyper["segment_length"], 0)
    elif kind == "mlp":
        model = _make_mlp(tuple(hyper["sizes"]), 0)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    _assign(model.params, tensors, prefix)
    return model

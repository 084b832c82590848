"""File formats: binary datasets, model checkpoints, scenario configs.

All binary payloads are little-endian float64.  Writers are fully
deterministic functions of their inputs, so the same collection or
training run always produces byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .env import SCENARIO_BUILDERS, Box, Dataset, Scenario, Trajectory

DATASET_MAGIC = b"MAMSGM01"
CHECKPOINT_MAGIC = b"MAMSGM-CKPT1"
CHECKPOINT_VERSION = 1

_SCENARIO_IDS = {"predator_prey": 0, "safe_zone": 1, "box_bumper": 2}
_SCENARIO_NAMES = {v: k for k, v in _SCENARIO_IDS.items()}

_HEADER = struct.Struct("<8sIIIIQ")  # magic, scenario id, T, H, n_traj, seed


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _traj_matrix(traj: Trajectory) -> np.ndarray:
    """(T, 12) rows: agent-x pos, vel, agent-y pos, vel, then both actions."""
    return np.concatenate(
        [
            traj.positions[:, 0],
            traj.velocities[:, 0],
            traj.positions[:, 1],
            traj.velocities[:, 1],
            traj.actions[:, 0],
            traj.actions[:, 1],
        ],
        axis=1,
    )


def _matrix_traj(m: np.ndarray) -> Trajectory:
    T = m.shape[0]
    pos = np.stack([m[:, 0:2], m[:, 4:6]], axis=1)
    vel = np.stack([m[:, 2:4], m[:, 6:8]], axis=1)
    act = np.stack([m[:, 8:10], m[:, 10:12]], axis=1)
    assert pos.shape == (T, 2, 2)
    return Trajectory(pos, vel, act)


def write_dataset(path, dataset: Dataset):
    sc = dataset.scenario
    if sc.name not in _SCENARIO_IDS:
        raise ValueError(f"unknown scenario {sc.name!r}")
    T = sc.episode_length
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                DATASET_MAGIC,
                _SCENARIO_IDS[sc.name],
                T,
                sc.segment_length,
                len(dataset.trajectories),
                dataset.seed & 0xFFFFFFFFFFFFFFFF,
            )
        )
        for traj in dataset.trajectories:
            if len(traj) != T:
                raise ValueError("trajectory length disagrees with header")
            fh.write(_traj_matrix(traj).astype("<f8").tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError("truncated dataset header")
        magic, scenario_id, T, H, n_traj, seed = _HEADER.unpack(head)
        if magic != DATASET_MAGIC:
            raise ValueError(f"bad dataset magic {magic!r}")
        if scenario_id not in _SCENARIO_NAMES:
            raise ValueError(f"unknown scenario id {scenario_id}")
        scenario = SCENARIO_BUILDERS[_SCENARIO_NAMES[scenario_id]]()
        scenario = replace(scenario, episode_length=T, segment_length=H)
        raw = fh.read()
    want = n_traj * T * 12 * 8
    if len(raw) != want:
        raise ValueError(f"dataset payload is {len(raw)} bytes, expected {want}")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(n_traj, T, 12)
    trajs = [_matrix_traj(flat[i]) for i in range(n_traj)]
    return Dataset(scenario, trajs, seed)


def export_dataset_jsonl(path, dataset: Dataset):
    """Human-inspectable export: one JSON object per line."""
    with open(path, "w") as fh:
        meta = {
            "scenario": dataset.scenario.name,
            "n_trajectories": len(dataset.trajectories),
            "episode_length": dataset.scenario.episode_length,
            "segment_length": dataset.scenario.segment_length,
            "seed": dataset.seed,
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for i, traj in enumerate(dataset.trajectories):
            row = {
                "index": i,
                "positions": traj.positions.tolist(),
                "velocities": traj.velocities.tolist(),
                "actions": traj.actions.tolist(),
            }
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    variant: str
    hyper: dict
    tensors: dict  # name -> float64 array, insertion-ordered
    config_hash: str
    version: int = CHECKPOINT_VERSION


def save_checkpoint(path, variant: str, hyper: dict, tensors: dict, config_hash: str = ""):
    names = list(tensors)
    header = {
        "variant": variant,
        "hyper": hyper,
        "config_hash": config_hash,
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode())
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
            tensors[spec["name"]] = data.reshape(shape)
    return Checkpoint(header["variant"], header["hyper"], tensors, header["config_hash"], version)


# ---------------------------------------------------------------------------
# scenario configs
# ---------------------------------------------------------------------------


def _fmt_box(box: Box) -> str:
    return ",".join(repr(v) for v in (box.x0, box.x1, box.y0, box.y1))


def _parse_box(text: str) -> Box:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValueError(f"expected 4 comma-separated numbers, got {text!r}")
    return Box(*vals)


def format_scenario(sc: Scenario) -> str:
    lines = [
        f"name = {sc.name}",
        f"half_extent = {sc.half_extent!r}",
        f"dt = {sc.dt!r}",
        f"damping = {sc.damping!r}",
        f"contact_stiffness = {sc.contact_stiffness!r}",
        f"agent_radius = {sc.agent_radius!r}",
        f"episode_length = {sc.episode_length}",
        f"segment_length = {sc.segment_length}",
        f"action_mode = {sc.action_mode}",
        f"agent_contact = {str(sc.agent_contact).lower()}",
        f"exploration_hold = {sc.exploration_hold}",
        f"exploration_bias = {str(sc.exploration_bias).lower()}",
        "obstacles = " + ("; ".join(_fmt_box(b) for b in sc.obstacles) if sc.obstacles else "none"),
        "safe_zone = " + (_fmt_box(sc.safe_zone) if sc.safe_zone is not None else "none"),
        "goal = " + (",".join(repr(v) for v in sc.goal) if sc.goal is not None else "none"),
    ]
    return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> Scenario:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        kv[key] = val

    def opt(key, conv, default):
        return conv(kv[key]) if key in kv else default

    name = kv.get("name", "predator_prey")
    obstacles = ()
    if kv.get("obstacles", "none") != "none":
        obstacles = tuple(_parse_box(part.strip()) for part in kv["obstacles"].split(";"))
    zone = None if kv.get("safe_zone", "none") == "none" else _parse_box(kv["safe_zone"])
    goal = None
    if kv.get("goal", "none") != "none":
        gx, gy = (float(v) for v in kv["goal"].split(","))
        goal = (gx, gy)
    return Scenario(
        name=name,
        half_extent=opt("half_extent", float, 1.5),
        dt=opt("dt", float, 0.1),
        damping=opt("damping", float, 0.25),
        contact_stiffness=opt("contact_stiffness", float, 100.0),
        agent_radius=opt("agent_radius", float, 0.1),
        episode_length=opt("episode_length", int, 50),
        segment_length=opt("segment_length", int, 10),
        action_mode=kv.get("action_mode", "continuous"),
        agent_contact=opt("agent_contact", lambda s: s == "true", False),
        exploration_hold=opt("exploration_hold", int, 5),
        exploration_bias=opt("exploration_bias", lambda s: s == "true", False),
        obstacles=obstacles,
        safe_zone=zone,
        goal=goal,
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


def save_scenario(path, sc: Scenario):
    with open(path, "w") as fh:
        fh.write(format_scenario(sc))


# ---------------------------------------------------------------------------
# config hashing
# ---------------------------------------------------------------------------


def config_hash(obj) -> str:
    """sha256 of the canonical JSON encoding of a config mapping."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()

"""BRCK checkpoint format.

Layout (little-endian)::

    magic       4 bytes  b"BRCK"
    version     u32      1
    header_len  u32
    header      header_len bytes of UTF-8 JSON (sorted keys): schedule params,
                policy dims, normalization flag, seed, epoch, optimizer
                hyperparameters and step count, training RNG state
    n_tensors   u32
    n_tensors records of:
        name_len u32, name bytes (UTF-8), rank u32, dims u64[rank], payload f64[prod(dims)]

Normalization statistics and Adam moments are stored as named tensor
records (``norm.*``, ``adam.m.*``, ``adam.v.*``) next to the network weights.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._binio import ByteReader, FormatError
from .dataset import NormStats
from .nn import AdamState, DenseLayer, MLP
from .policy import DiffusionPolicy, PolicyConfig
from .schedule import NoiseSchedule, linear_schedule

MAGIC = b"BRCK"
VERSION = 1


@dataclass
class Checkpoint:
    policy: DiffusionPolicy
    schedule: NoiseSchedule
    norm: NormStats | None
    seed: int = 0
    epoch: int = 0
    adam: AdamState | None = None
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def normalize(self):
        return self.norm is not None


def _header(ck: Checkpoint):
    h = {
        "schedule": ck.schedule.params(),
        "policy": ck.policy.config.to_dict(),
        "normalize": ck.normalize,
        "seed": int(ck.seed),
        "epoch": int(ck.epoch),
        "rng_state": ck.rng_state,
        "extra": ck.extra,
    }
    if ck.adam is not None:
        h["adam"] = {"step_count": ck.adam.step_count, "lr": ck.adam.lr, "beta1": ck.adam.beta1,
                     "beta2": ck.adam.beta2, "eps_stab": ck.adam.eps_stab}
    return h


def _tensors(ck: Checkpoint):
    out = list(ck.policy.named_parameters())
    if ck.norm is not None:
        out += [(f"norm.{k}", v) for k, v in ck.norm.arrays().items()]
    if ck.adam is not None:
        out += [(f"adam.m.{i}", m) for i, m in enumerate(ck.adam.first_moment)]
        out += [(f"adam.v.{i}", v) for i, v in enumerate(ck.adam.second_moment)]
    return out


def to_bytes(ck: Checkpoint) -> bytes:
    header = json.dumps(_header(ck), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    tensors = _tensors(ck)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> Checkpoint:
    r = ByteReader(data, "BRCK file")
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported BRCK version {version}", 4)
    hlen = r.u32("header length")
    hpos = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", hpos) from None
    n = r.u32("tensor count")
    tensors = {}
    for _ in range(n):
        rec_pos = r.pos
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8", "replace")
        rank = r.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of {name}"))
        count = int(np.prod(dims)) if rank else 1
        payload = r.take(8 * count, f"payload of {name}")
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}", rec_pos)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if r.remaining():
        raise FormatError(f"{r.remaining()} trailing bytes after last tensor", r.pos)
    return _assemble(header, tensors, r.pos)


def _assemble(header, tensors, end):
    try:
        cfg = PolicyConfig(**header["policy"])
        sched = linear_schedule(**header["schedule"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}", 12) from None

    def take(name, shape):
        if name not in tensors:
            raise FormatError(f"missing tensor {name!r}", end)
        arr = tensors.pop(name)
        if arr.shape != tuple(shape):
            raise FormatError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}", end)
        return arr

    nets = {}
    for net_name, spec in (("encoder", cfg.encoder_spec()), ("denoiser", cfg.denoiser_spec())):
        layers = []
        for i, (n_in, n_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
            layers.append(DenseLayer(take(f"{net_name}.{i}.weight", (n_out, n_in)),
                                     take(f"{net_name}.{i}.bias", (n_out,))))
        nets[net_name] = MLP(spec, layers)
    policy = DiffusionPolicy(cfg, nets["encoder"], nets["denoiser"])
    norm = None
    if header.get("normalize"):
        norm = NormStats(take("norm.obs_mean", (cfg.obs_dim,)), take("norm.obs_std", (cfg.obs_dim,)),
                         take("norm.act_mean", (cfg.act_dim,)), take("norm.act_std", (cfg.act_dim,)))
    adam = None
    if "adam" in header:
        params = policy.parameters()
        m = [take(f"adam.m.{i}", p.shape) for i, p in enumerate(params)]
        v = [take(f"adam.v.{i}", p.shape) for i, p in enumerate(params)]
        adam = AdamState(m, v, **header["adam"])
    if tensors:
        raise FormatError(f"unexpected tensors {sorted(tensors)}", end)
    return Checkpoint(policy, sched, norm, header.get("seed", 0), header.get("epoch", 0),
                      adam, header.get("rng_state"), header.get("extra", {}))


def save_checkpoint(ck: Checkpoint, path):
    """Write atomically: a failed write leaves any previous file at ``path`` intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())

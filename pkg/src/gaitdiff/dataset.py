"""Offline observation/action dataset: BRDF file format, splits, batching, norm stats.

BRDF layout (little-endian)::

    magic   4 bytes  b"BRDF"
    version u32      1
    n       u64
    obs_dim u32
    act_dim u32
    n records of: obs f32[obs_dim], act f32[act_dim], velocity f32, slope f32, terrain_id u8
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import ByteReader, FormatError

MAGIC = b"BRDF"
VERSION = 1
HEADER_SIZE = 24
OBS_DIM = 150
ACT_DIM = 6
STD_FLOOR = 1e-6

TERRAIN_FLAT, TERRAIN_SLOPE, TERRAIN_ROUGH, TERRAIN_TOY = 0, 1, 2, 3
TERRAIN_NAMES = {TERRAIN_FLAT: "flat", TERRAIN_SLOPE: "slope",
                 TERRAIN_ROUGH: "rough", TERRAIN_TOY: "toy"}


def record_dtype(obs_dim, act_dim):
    return np.dtype([
        ("obs", "<f4", (obs_dim,)),
        ("act", "<f4", (act_dim,)),
        ("velocity", "<f4"),
        ("slope", "<f4"),
        ("terrain", "u1"),
    ])


@dataclass
class OfflineDataset:
    observations: np.ndarray
    actions: np.ndarray
    velocity: np.ndarray
    slope: np.ndarray
    terrain_id: np.ndarray

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.slope = np.asarray(self.slope, dtype=np.float64)
        self.terrain_id = np.asarray(self.terrain_id, dtype=np.uint8)
        n = self.observations.shape[0]
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("observations and actions must be 2-D")
        for name in ("actions", "velocity", "slope", "terrain_id"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if not (np.all(np.isfinite(self.observations)) and np.all(np.isfinite(self.actions))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self):
        return self.observations.shape[0]

    @property
    def obs_dim(self):
        return self.observations.shape[1]

    @property
    def act_dim(self):
        return self.actions.shape[1]

    @classmethod
    def empty(cls, obs_dim=OBS_DIM, act_dim=ACT_DIM):
        return cls(np.zeros((0, obs_dim)), np.zeros((0, act_dim)),
                   np.zeros(0), np.zeros(0), np.zeros(0, np.uint8))

    @classmethod
    def concatenate(cls, parts):
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("observations", "actions", "velocity", "slope", "terrain_id")))

    def subset(self, rows):
        return OfflineDataset(self.observations[rows], self.actions[rows],
                              self.velocity[rows], self.slope[rows], self.terrain_id[rows])


def to_bytes(ds: OfflineDataset) -> bytes:
    rec = np.empty(ds.n, dtype=record_dtype(ds.obs_dim, ds.act_dim))
    rec["obs"] = ds.observations
    rec["act"] = ds.actions
    rec["velocity"] = ds.velocity
    rec["slope"] = ds.slope
    rec["terrain"] = ds.terrain_id
    header = MAGIC + struct.pack("<IQII", VERSION, ds.n, ds.obs_dim, ds.act_dim)
    return header + rec.tobytes()


def from_bytes(data: bytes, obs_dim=OBS_DIM, act_dim=ACT_DIM) -> OfflineDataset:
    """Parse a BRDF buffer. Pass ``obs_dim=None``/``act_dim=None`` to accept any dims."""
    r = ByteReader(data, "BRDF file")
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported BRDF version {version}", 4)
    n = r.u64("record count")
    file_obs = r.u32("obs_dim")
    file_act = r.u32("act_dim")
    if obs_dim is not None and file_obs != obs_dim:
        raise FormatError(f"obs_dim {file_obs} in file, schema requires {obs_dim}", 16)
    if act_dim is not None and file_act != act_dim:
        raise FormatError(f"act_dim {file_act} in file, schema requires {act_dim}", 20)
    dt = record_dtype(file_obs, file_act)
    need = n * dt.itemsize
    if r.remaining() < need:
        full = r.remaining() // dt.itemsize
        raise FormatError(
            f"BRDF file truncated: header declares {n} records of {dt.itemsize} bytes, "
            f"only {full} complete", len(data))
    if r.remaining() > need:
        raise FormatError(f"{r.remaining() - need} trailing bytes after last record",
                          HEADER_SIZE + need)
    rec = np.frombuffer(r.take(need, "records"), dtype=dt, count=n)
    return OfflineDataset(rec["obs"].astype(np.float64), rec["act"].astype(np.float64),
                          rec["velocity"].astype(np.float64), rec["slope"].astype(np.float64),
                          rec["terrain"].copy())


def save_dataset(ds: OfflineDataset, path):
    Path(path).write_bytes(to_bytes(ds))


def load_dataset(path, obs_dim=OBS_DIM, act_dim=ACT_DIM) -> OfflineDataset:
    return from_bytes(Path(path).read_bytes(), obs_dim, act_dim)


def export_csv(ds: OfflineDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"obs_{i}" for i in range(ds.obs_dim)]
                   + [f"act_{j}" for j in range(ds.act_dim)]
                   + ["velocity", "slope", "terrain"])
        for i in range(ds.n):
            w.writerow([repr(float(x)) for x in ds.observations[i]]
                       + [repr(float(x)) for x in ds.actions[i]]
                       + [repr(float(ds.velocity[i])), repr(float(ds.slope[i])),
                          TERRAIN_NAMES.get(int(ds.terrain_id[i]), str(ds.terrain_id[i]))])


@dataclass
class SplitIndex:
    train_rows: np.ndarray
    val_rows: np.ndarray
    seed: int


def split_train_val(n, ratio=0.8, seed=0) -> SplitIndex:
    """Random permutation by ``seed``; the first floor(ratio * n) rows go to train."""
    if isinstance(n, OfflineDataset):
        n = n.n
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n))
    return SplitIndex(np.sort(perm[:n_train]), np.sort(perm[n_train:]), seed)


def iter_batches(train_rows, batch_size, rng: np.random.Generator):
    """Yield one epoch of row-index batches, without replacement.

    An epoch is ceil(len(train_rows) / batch_size) batches; the last may be short.
    """
    n = len(train_rows)
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if batch_size > n:
        raise ValueError(
            f"batch size {batch_size} exceeds training split size {n}; "
            f"lower the batch size to at most {n}")
    perm = np.asarray(train_rows)[rng.permutation(n)]
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def sample_batch(ds: OfflineDataset, rows):
    return ds.observations[rows], ds.actions[rows]


@dataclass
class NormStats:
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray

    def arrays(self):
        return {"obs_mean": self.obs_mean, "obs_std": self.obs_std,
                "act_mean": self.act_mean, "act_std": self.act_std}

    @classmethod
    def identity(cls, obs_dim, act_dim):
        return cls(np.zeros(obs_dim), np.ones(obs_dim), np.zeros(act_dim), np.ones(act_dim))


def compute_norm_stats(ds: OfflineDataset, index: SplitIndex | None = None) -> NormStats:
    """Per-dimension mean and (population) std over the training rows, std floored."""
    rows = np.arange(ds.n) if index is None else index.train_rows
    if len(rows) == 0:
        raise ValueError("training split is empty")
    obs = ds.observations[rows]
    act = ds.actions[rows]
    return NormStats(obs.mean(axis=0), np.maximum(obs.std(axis=0), STD_FLOOR),
                     act.mean(axis=0), np.maximum(act.std(axis=0), STD_FLOOR))

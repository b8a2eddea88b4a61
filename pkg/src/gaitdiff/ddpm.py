"""Denoising-diffusion training and per-control-step action sampling."""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import checkpoint as ckpt_io
from . import kernels
from .dataset import NormStats, OfflineDataset, compute_norm_stats, iter_batches, split_train_val
from .nn import MLP, AdamState, NetworkSpec, adam_step, flatten_grads, mse_loss
from .policy import (DiffusionPolicy, PolicyConfig, denormalize_action, normalize_action,
                     normalize_observation)
from .schedule import NoiseSchedule, sinusoidal_embedding

log = logging.getLogger(__name__)


class SamplerMode(str, enum.Enum):
    PAPER_LITERAL = "paper-literal"
    ANCESTRAL = "ancestral"


def reverse_step_literal(a_t, eps_hat):
    """Coefficient-free update: a^{t-1} = a^t - eps_hat."""
    return np.asarray(a_t) - np.asarray(eps_hat)


def reverse_step_ancestral(a_t, eps_hat, t, s: NoiseSchedule, z):
    """Standard DDPM update with variance beta_t; no noise is added at t = 1."""
    beta = s.beta(t)
    mean = (np.asarray(a_t) - beta / math.sqrt(1.0 - s.alpha_bar(t)) * np.asarray(eps_hat)) \
        / math.sqrt(s.alpha(t))
    if t == 1:
        return mean
    return mean + math.sqrt(beta) * np.asarray(z)


def reverse_chain(eps_fn, s: NoiseSchedule, a_T, rng, mode=SamplerMode.ANCESTRAL):
    """Run t = T..1 with ``eps_fn(a, t)``. Works on single vectors or row batches."""
    mode = SamplerMode(mode)
    a = np.array(a_T, dtype=np.float64)
    for t in range(s.T, 0, -1):
        eps_hat = eps_fn(a, t)
        if mode is SamplerMode.PAPER_LITERAL:
            a = reverse_step_literal(a, eps_hat)
        else:
            z = rng.standard_normal(a.shape) if t > 1 else np.zeros_like(a)
            a = reverse_step_ancestral(a, eps_hat, t, s, z)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite sample at diffusion step {t}")
    return a


# ------------------------------------------------------------------ training


def train_step(policy: DiffusionPolicy, s: NoiseSchedule, opt: AdamState,
               obs, actions, rng: np.random.Generator, batch_index=0):
    """One optimizer step on a batch of (normalized) observations and clean actions."""
    obs = np.atleast_2d(obs)
    actions = np.atleast_2d(actions)
    if obs.shape[0] == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, s.T + 1, size=obs.shape[0])
    eps = rng.standard_normal(actions.shape)
    loss, grads = policy.loss_and_grads(obs, actions, t, eps, s)
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss} at batch {batch_index} (lr={opt.lr}, adam step {opt.step_count})")
    adam_step(policy.parameters(), grads, opt)
    return loss


def evaluate_loss(policy: DiffusionPolicy, s: NoiseSchedule, obs, actions, seed=0, chunk=4096):
    """Denoising loss with draws fixed by ``seed``, so values are comparable across epochs."""
    rng = np.random.default_rng(seed)
    n = obs.shape[0]
    t = rng.integers(1, s.T + 1, size=n)
    eps = rng.standard_normal(actions.shape)
    total = 0.0
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        eps_hat = policy.eps_for(
            _noised(actions[sl], t[sl], eps[sl], s), t[sl], obs[sl])
        total += float(np.sum((eps_hat - eps[sl]) ** 2))
    return total / eps.size


def _noised(a0, t, eps, s):
    ab = s.alpha_bars[t - 1][:, None]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


@dataclass
class TrainConfig:
    epochs: int = 10000
    batch_size: int = 4000
    lr: float = 1e-4
    seed: int = 0
    normalize: bool = True
    split_ratio: float = 0.8
    save_every: int = 1000
    eval_every: int = 1
    eval_seed: int = 1234

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    epoch: int
    mean_batch_loss: float
    val_loss: float
    wall_time: float


@dataclass
class TrainResult:
    policy: DiffusionPolicy
    norm: NormStats | None
    reports: list
    checkpoints: list = field(default_factory=list)
    split: object = None
    opt: AdamState | None = None


METRICS_HEADER = ["epoch", "train_loss", "val_loss", "wall_s"]


def train(ds: OfflineDataset, policy_config: PolicyConfig, s: NoiseSchedule, cfg: TrainConfig,
          out_dir=None, resume: ckpt_io.Checkpoint | None = None, metrics_path=None,
          on_epoch=None) -> TrainResult:
    """Training loop. Each epoch is ceil(N_train / B) batches drawn without replacement.

    Checkpoints go to ``out_dir`` at the start of a fresh run, every
    ``save_every`` epochs, and at the end.
    """
    split = split_train_val(ds.n, cfg.split_ratio, cfg.seed)
    if resume is not None:
        policy = resume.policy
        norm = resume.norm
        opt = resume.adam or AdamState.for_params(policy.parameters(), lr=cfg.lr)
        opt.lr = cfg.lr
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
    else:
        policy = DiffusionPolicy.init(policy_config, np.random.default_rng([cfg.seed, 0]))
        norm = compute_norm_stats(ds, split) if cfg.normalize else None
        opt = AdamState.for_params(policy.parameters(), lr=cfg.lr)
        rng = np.random.default_rng([cfg.seed, 1])
        start_epoch = 0

    obs = ds.observations if norm is None else normalize_observation(ds.observations, norm)
    act = ds.actions if norm is None else normalize_action(ds.actions, norm)
    obs_tr, act_tr = obs[split.train_rows], act[split.train_rows]
    obs_va, act_va = obs[split.val_rows], act[split.val_rows]
    local_rows = np.arange(len(split.train_rows))

    result = TrainResult(policy, norm, [], split=split, opt=opt)

    def save(epoch):
        if out_dir is None:
            return
        ck = ckpt_io.Checkpoint(policy, s, norm, cfg.seed, epoch, opt,
                                rng.bit_generator.state, {"train": cfg.to_dict()})
        path = f"{out_dir}/ckpt_epoch{epoch:06d}.brck"
        ckpt_io.save_checkpoint(ck, path)
        ckpt_io.save_checkpoint(ck, f"{out_dir}/last.brck")
        result.checkpoints.append(path)

    metrics_fh = None
    if metrics_path is not None:
        metrics_fh = open(metrics_path, "a" if resume is not None else "w", newline="")
        writer = csv.writer(metrics_fh)
        if resume is None:
            writer.writerow(METRICS_HEADER)
    try:
        if resume is None:
            save(0)
        t0 = time.perf_counter()
        for epoch in range(start_epoch, cfg.epochs):
            losses = []
            for b, rows in enumerate(iter_batches(local_rows, cfg.batch_size, rng)):
                losses.append(train_step(policy, s, opt, obs_tr[rows], act_tr[rows], rng, b))
            train_loss = float(np.mean(losses))
            val_loss = float("nan")
            if len(obs_va) and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
                val_loss = evaluate_loss(policy, s, obs_va, act_va, cfg.eval_seed)
            rep = TrainReport(epoch + 1, train_loss, val_loss, time.perf_counter() - t0)
            result.reports.append(rep)
            if metrics_fh is not None:
                writer.writerow([rep.epoch, repr(rep.mean_batch_loss), repr(rep.val_loss),
                                 f"{rep.wall_time:.3f}"])
                metrics_fh.flush()
            log.info("epoch %d train %.5f val %.5f", rep.epoch, train_loss, val_loss)
            if on_epoch is not None:
                on_epoch(rep)
            if (epoch + 1) % cfg.save_every == 0 or epoch + 1 == cfg.epochs:
                save(epoch + 1)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return result


def fit_mean_regressor(obs, actions, hidden=64, n_hidden=2, epochs=200, batch_size=256,
                       lr=1e-3, seed=0) -> MLP:
    """Plain MSE regression obs -> action (behaviour-cloning baseline)."""
    rng = np.random.default_rng(seed)
    net = MLP.init(NetworkSpec.mlp(obs.shape[1], hidden, n_hidden, actions.shape[1]), rng)
    opt = AdamState.for_params(net.parameters(), lr=lr)
    rows = np.arange(obs.shape[0])
    for _ in range(epochs):
        for b in iter_batches(rows, min(batch_size, len(rows)), rng):
            pred, cache = net.forward(obs[b])
            _, g = mse_loss(pred, actions[b])
            grads, _ = net.backward(cache, g)
            adam_step(net.parameters(), flatten_grads(grads), opt)
    return net


# ------------------------------------------------------------------ sampling


class Sampler:
    """Frozen policy + schedule prepared for low-latency single-observation sampling.

    The denoiser's first layer is split by input block so the time-embedding
    term is tabulated once per diffusion step and the latent term once per
    control step.
    """

    def __init__(self, policy: DiffusionPolicy, s: NoiseSchedule, norm: NormStats | None = None,
                 mode=SamplerMode.ANCESTRAL, warm_start=False, dtype=np.float64, backend=None):
        self.policy = policy
        self.schedule = s
        self.norm = norm
        self.mode = SamplerMode(mode)
        self.warm_start = warm_start
        self.dtype = np.dtype(dtype)
        self.backend = backend
        self._chain = kernels.denoise_chain if backend is None else kernels.get_backend(backend)[2]
        self._a_T = None
        cfg = policy.config
        f = lambda x: np.ascontiguousarray(x, dtype=self.dtype)
        enc = policy.encoder.layers
        den = policy.denoiser.layers
        w0 = den[0].weights
        na, ne = cfg.act_dim, cfg.temb_dim
        temb = sinusoidal_embedding(np.arange(1, s.T + 1), ne)
        self._enc_w = tuple(f(l.weights) for l in enc)
        self._enc_b = tuple(f(l.bias) for l in enc)
        self._act_w = f(w0[:, :na])
        self._lat_w = f(w0[:, na + ne:])
        self._step_bias = f(temb @ w0[:, na:na + ne].T + den[0].bias)
        self._den_w = tuple(f(l.weights) for l in den[1:])
        self._den_b = tuple(f(l.bias) for l in den[1:])
        sigma = np.sqrt(s.betas)
        sigma[0] = 0.0
        self._c1 = f(1.0 / np.sqrt(s.alphas))
        self._c2 = f(s.betas / np.sqrt(1.0 - s.alpha_bars))
        self._sigma = f(sigma)

    def reset(self):
        self._a_T = None

    def initial_noise(self, rng):
        if self.warm_start and self._a_T is not None:
            return self._a_T
        a_T = rng.standard_normal(self.policy.config.act_dim)
        if self.warm_start:
            self._a_T = a_T
        return a_T

    def sample(self, obs, rng: np.random.Generator):
        """Return ``(action, latency_seconds)`` for a single observation."""
        t0 = time.perf_counter()
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.policy.config.obs_dim,):
            raise ValueError(f"observation shape {obs.shape}, expected ({self.policy.config.obs_dim},)")
        if self.norm is not None:
            obs = normalize_observation(obs, self.norm)
        a_T = self.initial_noise(rng)
        if self.mode is SamplerMode.ANCESTRAL:
            z = rng.standard_normal((self.schedule.T, a_T.size))
        else:
            z = np.zeros((self.schedule.T, a_T.size))
        a, bad = self._chain(self._enc_w, self._enc_b, self._act_w, self._lat_w, self._step_bias,
                             self._den_w, self._den_b, obs.astype(self.dtype), a_T.astype(self.dtype),
                             z.astype(self.dtype), self._c1, self._c2, self._sigma,
                             self.mode is SamplerMode.PAPER_LITERAL)
        if bad >= 0:
            raise FloatingPointError(f"non-finite action at diffusion step {bad}")
        a = a.astype(np.float64)
        if self.norm is not None:
            a = denormalize_action(a, self.norm)
        return a, time.perf_counter() - t0

    act = sample

    def sample_batch(self, obs, rng: np.random.Generator):
        """Vectorized sampling for many observations (reference path, no latency timing)."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if self.norm is not None:
            obs = normalize_observation(obs, self.norm)
        latent = self.policy.encode(obs)
        n = obs.shape[0]
        temb_dim = self.policy.config.temb_dim

        def eps_fn(a, t):
            t_emb = np.broadcast_to(sinusoidal_embedding(t, temb_dim), (n, temb_dim))
            return self.policy.denoiser(np.concatenate([a, t_emb, latent], axis=1))

        a_T = rng.standard_normal((n, self.policy.config.act_dim))
        a = reverse_chain(eps_fn, self.schedule, a_T, rng, self.mode)
        return a if self.norm is None else denormalize_action(a, self.norm)


def sample_action(policy, s, obs, rng, mode=SamplerMode.ANCESTRAL, norm=None):
    """One-off convenience wrapper; build a :class:`Sampler` once for repeated calls."""
    return Sampler(policy, s, norm, mode).sample(obs, rng)


# ------------------------------------------------------------------ rollouts


@dataclass
class RolloutRecord:
    phases: list = field(default_factory=list)
    expert_actions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    latencies: list = field(default_factory=list)
    tracking_errors: list = field(default_factory=list)
    fell: bool = False
    reason: str = "completed"
    mode: str = ""

    @property
    def steps(self):
        return len(self.actions)

    def rmse(self):
        if not self.actions:
            return float("nan")
        d = np.asarray(self.actions) - np.asarray(self.expert_actions)
        return float(np.sqrt(np.mean(d * d)))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = len(self.actions[0]) if self.actions else 6
            w.writerow(["step", "phase"] + [f"expert_{j}" for j in range(n)]
                       + [f"policy_{j}" for j in range(n)] + ["latency_ms", "tracking_error"])
            for k in range(self.steps):
                w.writerow([k, repr(self.phases[k])]
                           + [repr(float(x)) for x in self.expert_actions[k]]
                           + [repr(float(x)) for x in self.actions[k]]
                           + [f"{self.latencies[k] * 1e3:.4f}", repr(self.tracking_errors[k])])


def closed_loop_rollout(env, controller, steps, rng: np.random.Generator) -> RolloutRecord:
    """Observe, act, step for ``steps`` control ticks or until the environment falls.

    ``controller.act(obs, rng)`` must return ``(action, latency_seconds)``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rec = RolloutRecord(mode=getattr(getattr(controller, "mode", None), "value", ""))
    obs = env.observation()
    for _ in range(steps):
        expert = env.expert_now()
        phase = env.phase
        a, latency = controller.act(obs, rng)
        obs = env.step(a)
        rec.phases.append(phase)
        rec.expert_actions.append(expert)
        rec.actions.append(np.asarray(a, dtype=np.float64))
        rec.frames.append(env.frame.copy())
        rec.latencies.append(latency)
        rec.tracking_errors.append(float(np.sqrt(np.mean((np.asarray(a) - expert) ** 2))))
        if not env.alive:
            rec.fell = True
            rec.reason = "fall"
            break
    return rec

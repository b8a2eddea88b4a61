"""Observation assembly, the latent-observation encoder and the noise-prediction denoiser."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .dataset import NormStats
from .nn import MLP, NetworkSpec, ShapeError, flatten_grads, mse_loss
from .schedule import EMBED_DIM, NoiseSchedule, forward_noise, sinusoidal_embedding

FRAME_DIM = 30
HISTORY = 5
OBS_DIM = FRAME_DIM * HISTORY
ACT_DIM = 6
LATENT_DIM = 48

# Slices into one 30-dim state frame.
FRAME_FIELDS = {
    "base_lin_vel": slice(0, 3),
    "base_ang_vel": slice(3, 6),
    "projected_gravity": slice(6, 9),
    "commands": slice(9, 12),
    "joint_pos_offset": slice(12, 18),
    "joint_vel": slice(18, 24),
    "prev_action": slice(24, 30),
}


def make_frame(base_lin_vel, base_ang_vel, projected_gravity, commands,
               joint_pos_offset, joint_vel, prev_action):
    frame = np.concatenate([np.asarray(v, dtype=np.float64) for v in (
        base_lin_vel, base_ang_vel, projected_gravity, commands,
        joint_pos_offset, joint_vel, prev_action)])
    if frame.shape != (FRAME_DIM,):
        raise ShapeError(f"state frame has {frame.size} entries, expected {FRAME_DIM}")
    g = frame[FRAME_FIELDS["projected_gravity"]]
    if abs(np.linalg.norm(g) - 1.0) > 1e-6:
        raise ValueError(f"projected gravity must be unit norm, got |g| = {np.linalg.norm(g)}")
    return frame


def frame_field(frame, name):
    return np.asarray(frame)[..., FRAME_FIELDS[name]]


def stack_history(frames):
    """Flatten five frames, oldest first. Shorter lists are front-padded with the first frame."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not 1 <= len(frames) <= HISTORY:
        raise ValueError(f"need 1..{HISTORY} frames, got {len(frames)}")
    for f in frames:
        if f.shape != (FRAME_DIM,):
            raise ShapeError(f"frame shape {f.shape}, expected ({FRAME_DIM},)")
    frames = [frames[0]] * (HISTORY - len(frames)) + frames
    return np.concatenate(frames)


def unstack_history(obs):
    obs = np.asarray(obs)
    if obs.shape != (OBS_DIM,):
        raise ShapeError(f"observation shape {obs.shape}, expected ({OBS_DIM},)")
    return [obs[i * FRAME_DIM:(i + 1) * FRAME_DIM].copy() for i in range(HISTORY)]


def _need_stats(stats):
    if stats is None:
        raise ValueError("normalization requested but no NormStats are available")


def normalize_observation(obs, stats: NormStats):
    _need_stats(stats)
    return (np.asarray(obs) - stats.obs_mean) / stats.obs_std


def denormalize_observation(obs_n, stats: NormStats):
    _need_stats(stats)
    return np.asarray(obs_n) * stats.obs_std + stats.obs_mean


def normalize_action(a, stats: NormStats):
    _need_stats(stats)
    return (np.asarray(a) - stats.act_mean) / stats.act_std


def denormalize_action(a_n, stats: NormStats):
    _need_stats(stats)
    return np.asarray(a_n) * stats.act_std + stats.act_mean


def build_embedding(t_emb, latent):
    """Condition vector: time embedding followed by latent observation."""
    t_emb = np.asarray(t_emb, dtype=np.float64)
    latent = np.asarray(latent, dtype=np.float64)
    if t_emb.ndim != latent.ndim or t_emb.shape[:-1] != latent.shape[:-1]:
        raise ShapeError(f"time embedding {t_emb.shape} and latent {latent.shape} do not align")
    return np.concatenate([t_emb, latent], axis=-1)


def split_embedding(emb, temb_dim=EMBED_DIM):
    emb = np.asarray(emb)
    return emb[..., :temb_dim], emb[..., temb_dim:]


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int = OBS_DIM
    act_dim: int = ACT_DIM
    latent_dim: int = LATENT_DIM
    enc_hidden: int = 48
    enc_layers: int = 3
    den_hidden: int = 256
    den_layers: int = 7
    temb_dim: int = EMBED_DIM

    def __post_init__(self):
        if self.den_layers < 1:
            raise ValueError("denoiser needs at least one hidden layer")
        if self.temb_dim % 2:
            raise ValueError("time embedding size must be even")

    @property
    def emb_dim(self):
        return self.temb_dim + self.latent_dim

    def encoder_spec(self):
        return NetworkSpec.mlp(self.obs_dim, self.enc_hidden, self.enc_layers, self.latent_dim)

    def denoiser_spec(self):
        return NetworkSpec.mlp(self.act_dim + self.emb_dim, self.den_hidden,
                               self.den_layers, self.act_dim)

    def to_dict(self):
        return asdict(self)


class DiffusionPolicy:
    """Encoder ``obs -> latent`` and denoiser ``(noisy action, emb) -> noise estimate``."""

    def __init__(self, config: PolicyConfig, encoder: MLP, denoiser: MLP):
        if encoder.spec != config.encoder_spec():
            raise ShapeError(f"encoder {encoder.spec.layer_sizes} does not match config")
        if denoiser.spec != config.denoiser_spec():
            raise ShapeError(f"denoiser {denoiser.spec.layer_sizes} does not match config")
        self.config = config
        self.encoder = encoder
        self.denoiser = denoiser

    @classmethod
    def init(cls, config: PolicyConfig, rng: np.random.Generator):
        enc = MLP.init(config.encoder_spec(), rng)
        den = MLP.init(config.denoiser_spec(), rng)
        return cls(config, enc, den)

    @classmethod
    def zeros(cls, config: PolicyConfig):
        return cls(config, MLP.zeros(config.encoder_spec()), MLP.zeros(config.denoiser_spec()))

    def parameters(self):
        return self.encoder.parameters() + self.denoiser.parameters()

    def named_parameters(self):
        out = []
        for net_name, net in (("encoder", self.encoder), ("denoiser", self.denoiser)):
            for i, layer in enumerate(net.layers):
                out.append((f"{net_name}.{i}.weight", layer.weights))
                out.append((f"{net_name}.{i}.bias", layer.bias))
        return out

    def copy(self):
        return DiffusionPolicy(self.config, self.encoder.copy(), self.denoiser.copy())

    def encode(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.config.obs_dim:
            raise ShapeError(f"observation length {obs.shape[-1]}, expected {self.config.obs_dim}")
        return self.encoder(obs)

    def predict_noise(self, noisy_action, emb):
        noisy_action = np.asarray(noisy_action, dtype=np.float64)
        emb = np.asarray(emb, dtype=np.float64)
        if noisy_action.shape[-1] != self.config.act_dim or emb.shape[-1] != self.config.emb_dim:
            raise ShapeError(
                f"denoiser input: action {noisy_action.shape}, embedding {emb.shape}; expected "
                f"last dims {self.config.act_dim} and {self.config.emb_dim}")
        return self.denoiser(np.concatenate([noisy_action, emb], axis=-1))

    def eps_for(self, noisy_action, t, obs):
        """Full conditioning path for one diffusion step: encode, embed, predict."""
        latent = self.encode(obs)
        t_emb = sinusoidal_embedding(t, self.config.temb_dim)
        if latent.ndim == 2 and t_emb.ndim == 1:
            t_emb = np.broadcast_to(t_emb, (latent.shape[0], t_emb.size))
        return self.predict_noise(noisy_action, build_embedding(t_emb, latent))

    def loss_and_grads(self, obs, a0, t, eps, schedule: NoiseSchedule):
        """Denoising MSE for given per-row steps ``t`` and noise ``eps``.

        Gradients flow through the denoiser and back into the encoder; they
        are returned flattened in ``parameters()`` order.
        """
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        a0 = np.atleast_2d(np.asarray(a0, dtype=np.float64))
        t = np.atleast_1d(np.asarray(t))
        a_t = forward_noise(a0, t, eps, schedule)
        latent, enc_cache = self.encoder.forward(obs)
        t_emb = sinusoidal_embedding(t, self.config.temb_dim)
        x = np.concatenate([a_t, t_emb, latent], axis=1)
        eps_hat, den_cache = self.denoiser.forward(x)
        loss, g = mse_loss(eps_hat, eps)
        den_grads, g_x = self.denoiser.backward(den_cache, g)
        enc_grads, _ = self.encoder.backward(enc_cache, g_x[:, self.config.act_dim + self.config.temb_dim:])
        return loss, flatten_grads(enc_grads) + flatten_grads(den_grads)

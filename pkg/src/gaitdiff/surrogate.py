"""Kinematic stand-in for a simulated 6-DOF biped.

The expert is an analytic gait generator: joint j targets
``offset_j(slope) + amp_j(velocity) * sin(2*pi*phase + phase_j)``, with the
right leg half a period behind the left. The environment tracks commanded
joint angles with a first-order lag and emits 30-dim state frames. None of
the constants here describe a real robot.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (TERRAIN_FLAT, TERRAIN_ROUGH, TERRAIN_SLOPE, TERRAIN_TOY, OfflineDataset)
from .policy import ACT_DIM, HISTORY, make_frame, stack_history

DT = 0.02
TRACKING_GAIN = 0.7
FALL_THRESHOLD = 0.5
FALL_WINDOW = 25

# Joint order: left hip roll, left thigh, left knee, right hip roll, right thigh, right knee.
DEFAULT_POSE = np.array([0.0, 0.4, -0.8, 0.0, 0.4, -0.8])
SLOPE_GAIN = np.array([0.0, 0.9, -0.6, 0.0, 0.9, -0.6])
AMP_BASE = np.array([0.03, 0.15, 0.20, 0.03, 0.15, 0.20])
AMP_VEL_GAIN = np.array([0.02, 0.20, 0.25, 0.02, 0.20, 0.25])
LEG_PHASES = np.array([0.0, 0.0, 0.5 * math.pi])
JOINT_PHASES = np.concatenate([LEG_PHASES, LEG_PHASES + math.pi])


@dataclass(frozen=True)
class TerrainParams:
    slope: float = 0.0
    roughness_amp: float = 0.0

    def __post_init__(self):
        if not abs(self.slope) < math.pi / 4:
            raise ValueError(f"|slope| must be < pi/4, got {self.slope}")
        if self.roughness_amp < 0:
            raise ValueError("roughness amplitude must be >= 0")

    @classmethod
    def from_degrees(cls, slope_deg, roughness_amp=0.0):
        return cls(math.radians(slope_deg), roughness_amp)

    @property
    def terrain_id(self):
        if self.roughness_amp > 0:
            return TERRAIN_ROUGH
        return TERRAIN_SLOPE if self.slope != 0 else TERRAIN_FLAT


@dataclass(frozen=True)
class GaitConfig:
    velocity_cmd: float
    stride_freq: float
    joint_amps: np.ndarray
    joint_phases: np.ndarray = field(default_factory=lambda: JOINT_PHASES.copy())
    base_offsets: np.ndarray = field(default_factory=lambda: DEFAULT_POSE.copy())
    slope_gains: np.ndarray = field(default_factory=lambda: SLOPE_GAIN.copy())

    def __post_init__(self):
        if self.stride_freq <= 0:
            raise ValueError("stride frequency must be positive")
        if np.any(np.asarray(self.joint_amps) < 0):
            raise ValueError("joint amplitudes must be >= 0")

    def joint_offsets(self, slope):
        return self.base_offsets + self.slope_gains * slope


def gait_config(velocity_cmd, stride_freq=None):
    """Default gait for a commanded forward speed (m/s)."""
    amps = AMP_BASE + AMP_VEL_GAIN * velocity_cmd if velocity_cmd > 0 else np.zeros(ACT_DIM)
    if stride_freq is None:
        stride_freq = 1.0 + 0.6 * velocity_cmd
    return GaitConfig(float(velocity_cmd), float(stride_freq), amps)


def expert_action(phase, cfg: GaitConfig, terrain: TerrainParams):
    return cfg.joint_offsets(terrain.slope) + cfg.joint_amps * np.sin(
        2.0 * math.pi * phase + cfg.joint_phases)


def projected_gravity(slope):
    return np.array([math.sin(slope), 0.0, -math.cos(slope)])


def _base_velocities(phase, cfg):
    s1, c1 = math.sin(2 * math.pi * phase), math.cos(2 * math.pi * phase)
    s2, c2 = math.sin(4 * math.pi * phase), math.cos(4 * math.pi * phase)
    lin = np.array([cfg.velocity_cmd * (1.0 + 0.1 * s2), 0.05 * s1, 0.03 * c2])
    ang = np.array([0.3 * c1, 0.05 * s2, 0.0])
    return lin, ang


def build_frame(phase, q, joint_vel, prev_action, cfg, terrain):
    lin, ang = _base_velocities(phase, cfg)
    return make_frame(lin, ang, projected_gravity(terrain.slope),
                      [cfg.velocity_cmd, 0.0, 0.0], q - DEFAULT_POSE, joint_vel, prev_action)


@dataclass
class SurrogateState:
    phase: float
    q: np.ndarray
    frame: np.ndarray
    history: deque
    errors: deque
    alive: bool = True
    step: int = 0

    def copy(self):
        return replace(self, q=self.q.copy(), frame=self.frame.copy(),
                       history=deque(self.history, maxlen=HISTORY),
                       errors=deque(self.errors, maxlen=FALL_WINDOW))

    def observation(self):
        return stack_history(list(self.history))


def initial_state(cfg: GaitConfig, terrain: TerrainParams, phase=0.0):
    """Joints at the expert pose for ``phase``, at rest; history padded with this frame."""
    q = expert_action(phase, cfg, terrain)
    frame = build_frame(phase, q, np.zeros(ACT_DIM), q, cfg, terrain)
    return SurrogateState(phase % 1.0, q, frame, deque([frame] * HISTORY, maxlen=HISTORY),
                          deque(maxlen=FALL_WINDOW))


def env_step(state: SurrogateState, a, cfg: GaitConfig, terrain: TerrainParams,
             rng: np.random.Generator | None = None) -> SurrogateState:
    if not state.alive:
        raise RuntimeError("cannot step a fallen environment; reset it first")
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (ACT_DIM,):
        raise ValueError(f"action shape {a.shape}, expected ({ACT_DIM},)")
    nxt = state.copy()
    err = a - expert_action(state.phase, cfg, terrain)
    nxt.errors.append(float(np.mean(err * err)))
    q_next = state.q + TRACKING_GAIN * (a - state.q)
    if terrain.roughness_amp > 0:
        if rng is None:
            raise ValueError("rough terrain needs an RNG")
        q_next = q_next + rng.normal(0.0, terrain.roughness_amp, ACT_DIM)
    joint_vel = (q_next - state.q) / DT
    nxt.phase = (state.phase + cfg.stride_freq * DT) % 1.0
    nxt.q = q_next
    nxt.frame = build_frame(nxt.phase, q_next, joint_vel, a, cfg, terrain)
    nxt.history.append(nxt.frame)
    nxt.step = state.step + 1
    if math.sqrt(np.mean(nxt.errors)) > FALL_THRESHOLD:
        nxt.alive = False
    return nxt


class SurrogateEnv:
    def __init__(self, cfg: GaitConfig, terrain: TerrainParams, seed=0, phase=0.0):
        self.cfg = cfg
        self.terrain = terrain
        self.rng = np.random.default_rng(seed)
        self.state = initial_state(cfg, terrain, phase)

    @property
    def phase(self):
        return self.state.phase

    @property
    def alive(self):
        return self.state.alive

    @property
    def frame(self):
        return self.state.frame

    def observation(self):
        return self.state.observation()

    def expert_now(self):
        return expert_action(self.state.phase, self.cfg, self.terrain)

    def step(self, a):
        self.state = env_step(self.state, a, self.cfg, self.terrain, self.rng)
        return self.observation()


class ExpertController:
    """Reads the environment's true phase; the tracking-error reference itself."""

    def __init__(self, env: SurrogateEnv):
        self.env = env

    def act(self, obs, rng):
        return self.env.expert_now(), 0.0


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class RecipeCell:
    velocity: float
    slope: float
    pairs: int
    roughness: float = 0.0


DEFAULT_VELOCITIES = (0.3, 1.0)
DEFAULT_SLOPES_DEG = (0.0, 5.7, 10.2)


def default_recipe(n_total=60000):
    """Equal pairs per (velocity, slope) cell; any remainder goes to the first cells."""
    cells = [(v, s) for v in DEFAULT_VELOCITIES for s in DEFAULT_SLOPES_DEG]
    base, extra = divmod(int(n_total), len(cells))
    return [RecipeCell(v, math.radians(s), base + (1 if i < extra else 0))
            for i, (v, s) in enumerate(cells)]


def parse_recipe(text):
    """Parse lines like ``velocity=0.3 slope_deg=5.7 pairs=10000 [roughness=0.01]``."""
    cells = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kv = {}
        for tok in line.split():
            if "=" not in tok:
                raise ValueError(f"recipe line {lineno}: expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            kv[k.strip()] = v.strip()
        try:
            if "slope_deg" in kv:
                slope = math.radians(float(kv.pop("slope_deg")))
            else:
                slope = float(kv.pop("slope", 0.0))
            cell = RecipeCell(float(kv.pop("velocity")), slope, int(kv.pop("pairs")),
                              float(kv.pop("roughness", 0.0)))
        except KeyError as exc:
            raise ValueError(f"recipe line {lineno}: missing {exc.args[0]}") from None
        if kv:
            raise ValueError(f"recipe line {lineno}: unknown keys {sorted(kv)}")
        cells.append(cell)
    return cells


def format_recipe(cells):
    return "".join(f"velocity={c.velocity!r} slope_deg={math.degrees(c.slope)!r} "
                   f"pairs={c.pairs} roughness={c.roughness!r}\n" for c in cells)


def gen_dataset(recipe, seed=0, episode_steps=250, action_noise=0.02) -> OfflineDataset:
    """Roll the expert in the environment and record (observation, expert action) pairs.

    The executed action is the expert action plus Gaussian noise of std
    ``action_noise``; the recorded label is always the clean expert action.
    """
    if not recipe:
        raise ValueError("recipe is empty")
    parts = []
    for ci, cell in enumerate(recipe):
        cfg = gait_config(cell.velocity)
        terrain = TerrainParams(cell.slope, cell.roughness)
        rng = np.random.default_rng([seed, ci])
        obs = np.empty((cell.pairs, HISTORY * 30))
        act = np.empty((cell.pairs, ACT_DIM))
        k = 0
        episode = 0
        while k < cell.pairs:
            env = SurrogateEnv(cfg, terrain, seed=[seed, ci, episode], phase=rng.uniform())
            for _ in range(min(episode_steps, cell.pairs - k)):
                obs[k] = env.observation()
                act[k] = env.expert_now()
                env.step(act[k] + rng.normal(0.0, action_noise, ACT_DIM))
                k += 1
            episode += 1
        parts.append(OfflineDataset(obs, act, np.full(cell.pairs, cell.velocity),
                                    np.full(cell.pairs, cell.slope),
                                    np.full(cell.pairs, terrain.terrain_id, np.uint8)))
    return OfflineDataset.concatenate(parts)


@dataclass
class TrackingResult:
    rmse: float
    fell: bool
    steps: int
    record: object


def eval_tracking(controller, cfg: GaitConfig, terrain: TerrainParams, steps=500, seed=0,
                  phase=0.0) -> TrackingResult:
    """Closed-loop RMSE (rad) between controller and expert actions over survived steps.

    ``controller`` is either an object with ``act(obs, rng)`` or a class/factory
    taking the environment (e.g. :class:`ExpertController`).
    """
    from .ddpm import closed_loop_rollout

    env = SurrogateEnv(cfg, terrain, seed=[seed, 1], phase=phase)
    if isinstance(controller, type) or not hasattr(controller, "act"):
        controller = controller(env)
    if hasattr(controller, "reset"):
        controller.reset()
    rec = closed_loop_rollout(env, controller, steps, np.random.default_rng([seed, 2]))
    return TrackingResult(rec.rmse(), rec.fell, rec.steps, rec)


# ---------------------------------------------------------------- toy tasks

BIMODAL_MODES = (-1.0, 1.0)
BIMODAL_STD = 0.05
BIMODAL_EDGE = 0.25


def bimodal_sample(rng: np.random.Generator, n=1):
    """Condition ~ U(-1, 1) carries no information; action is +-1 with equal weight plus noise."""
    cond = rng.uniform(-1.0, 1.0, size=(n, 1))
    modes = np.where(rng.random(n) < 0.5, BIMODAL_MODES[0], BIMODAL_MODES[1])
    act = modes[:, None] + BIMODAL_STD * rng.standard_normal((n, 1))
    return cond, act


def bimodal_dataset(n, seed=0) -> OfflineDataset:
    cond, act = bimodal_sample(np.random.default_rng(seed), n)
    return OfflineDataset(cond, act, np.zeros(n), np.zeros(n), np.full(n, TERRAIN_TOY, np.uint8))


def bimodal_eval(samples):
    """Fractions of samples at or below -0.25, at or above +0.25, and strictly between."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    neg = float(np.mean(x <= -BIMODAL_EDGE))
    pos = float(np.mean(x >= BIMODAL_EDGE))
    mid = float(np.mean((x > -BIMODAL_EDGE) & (x < BIMODAL_EDGE)))
    return neg, pos, mid


@dataclass(frozen=True)
class GaussianToyTask:
    """1-D Gaussian data, for which the optimal noise predictor is known in closed form."""

    mean: float = 1.5
    std: float = 0.8

    def sample(self, rng, n):
        return self.mean + self.std * rng.standard_normal((n, 1))

    def optimal_eps(self, a, t, s):
        """E[eps | a_t = a] for a_t = sqrt(ab) a0 + sqrt(1 - ab) eps, a0 ~ N(mean, std^2)."""
        ab = s.alpha_bar(t)
        var = ab * self.std ** 2 + 1.0 - ab
        return math.sqrt(1.0 - ab) * (np.asarray(a) - math.sqrt(ab) * self.mean) / var

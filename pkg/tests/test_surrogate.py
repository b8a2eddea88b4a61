import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitdiff import surrogate as S
from gaitdiff.ddpm import Sampler
from gaitdiff.policy import FRAME_DIM, DiffusionPolicy, PolicyConfig, frame_field, unstack_history
from gaitdiff.schedule import linear_schedule

SIN_10_2 = 0.1770847403195833  # math.sin(math.radians(10.2)), computed independently


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.sampled_from([0.3, 1.0]), st.floats(-0.3, 0.3))
def test_expert_periodic_and_antiphase(phase, v, slope):
    cfg, ter = S.gait_config(v), S.TerrainParams(slope)
    a = S.expert_action(phase, cfg, ter)
    np.testing.assert_allclose(S.expert_action(phase + 1.0, cfg, ter), a, atol=1e-12)
    off = cfg.joint_offsets(slope)
    b = S.expert_action(phase + 0.5, cfg, ter)
    np.testing.assert_allclose(b[:3] - off[:3], a[3:] - off[3:], atol=1e-12)


def test_zero_velocity_stands_still():
    cfg, ter = S.gait_config(0.0), S.TerrainParams()
    for ph in (0.0, 0.3, 0.77):
        assert np.array_equal(S.expert_action(ph, cfg, ter), S.DEFAULT_POSE)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_expert_lipschitz_in_slope(phase, s1, s2):
    cfg = S.gait_config(1.0)
    d = S.expert_action(phase, cfg, S.TerrainParams(s1)) - S.expert_action(phase, cfg, S.TerrainParams(s2))
    assert np.max(np.abs(d)) <= np.max(np.abs(S.SLOPE_GAIN)) * abs(s1 - s2) + 1e-12


def test_projected_gravity_values():
    g = S.projected_gravity(math.radians(10.2))
    assert abs(g[0] - SIN_10_2) < 1e-15 and g[1] == 0.0
    assert abs(np.linalg.norm(g) - 1.0) < 1e-15
    assert np.array_equal(S.projected_gravity(0.0), [0.0, 0.0, -1.0])


def test_holding_pose_gives_zero_joint_velocity():
    cfg, ter = S.gait_config(0.0), S.TerrainParams()
    st_ = S.initial_state(cfg, ter)
    for _ in range(5):
        st_ = S.env_step(st_, S.DEFAULT_POSE, cfg, ter)
    assert np.array_equal(frame_field(st_.frame, "joint_vel"), np.zeros(6))
    assert np.array_equal(frame_field(st_.frame, "joint_pos_offset"), np.zeros(6))


def test_step_bookkeeping():
    cfg, ter = S.gait_config(1.0), S.TerrainParams.from_degrees(5.7)
    env = S.SurrogateEnv(cfg, ter, phase=0.25)
    obs0 = env.observation()
    frames = unstack_history(obs0)
    assert all(np.array_equal(f, frames[0]) for f in frames)
    a = env.expert_now()
    obs1 = env.step(a)
    new = unstack_history(obs1)
    assert np.array_equal(new[-1], env.frame)
    assert np.array_equal(frame_field(new[-1], "prev_action"), a)
    assert np.array_equal(new[0], frames[1])
    assert math.isclose(env.phase, 0.25 + cfg.stride_freq * S.DT)
    with pytest.raises(ValueError):
        env.step(np.zeros(5))


def test_expert_tracks_perfectly():
    for deg in (0.0, 5.7, 8.0):
        res = S.eval_tracking(S.ExpertController, S.gait_config(1.0), S.TerrainParams.from_degrees(deg),
                              steps=300)
        assert res.rmse == 0.0 and not res.fell and res.steps == 300


def test_untrained_policy_falls():
    pol = DiffusionPolicy.init(PolicyConfig(), np.random.default_rng(0))
    res = S.eval_tracking(Sampler(pol, linear_schedule()), S.gait_config(1.0),
                          S.TerrainParams.from_degrees(5.7), steps=200)
    assert res.fell and res.steps < 200


def test_fallen_env_refuses_to_step():
    env = S.SurrogateEnv(S.gait_config(1.0), S.TerrainParams())
    env.step(np.full(6, 5.0))
    assert not env.alive
    with pytest.raises(RuntimeError):
        env.step(np.zeros(6))


def test_rough_terrain_needs_rng_and_is_seeded():
    cfg, ter = S.gait_config(1.0), S.TerrainParams(0.0, 0.01)
    with pytest.raises(ValueError):
        S.env_step(S.initial_state(cfg, ter), S.DEFAULT_POSE, cfg, ter)
    o = [S.SurrogateEnv(cfg, ter, seed=3).step(S.DEFAULT_POSE) for _ in range(2)]
    assert np.array_equal(o[0], o[1])


def test_gen_dataset_cells_and_labels():
    recipe = S.default_recipe(600)
    assert [c.pairs for c in recipe] == [100] * 6
    ds = S.gen_dataset(recipe, seed=1, episode_steps=40)
    assert ds.n == 600 and ds.obs_dim == 150 and ds.act_dim == 6
    for k, cell in enumerate(recipe):
        rows = slice(100 * k, 100 * (k + 1))
        assert np.all(ds.velocity[rows] == cell.velocity)
        assert np.all(ds.slope[rows] == cell.slope)
        g = ds.observations[rows, -FRAME_DIM + 6:-FRAME_DIM + 9]
        np.testing.assert_allclose(g[:, 0], math.sin(cell.slope), atol=1e-15)
    assert set(np.unique(ds.terrain_id)) == {0, 1}
    # Labels are clean expert actions: recover each row's phase from the newest frame.
    newest = ds.observations[:, -FRAME_DIM:]
    lin = frame_field(newest, "base_ang_vel")[:, 0] / 0.3
    lat = frame_field(newest, "base_lin_vel")[:, 1] / 0.05
    phase = np.arctan2(lat, lin) / (2 * math.pi)
    for i in (0, 250, 599):
        cell = recipe[i // 100]
        exp = S.expert_action(phase[i], S.gait_config(cell.velocity), S.TerrainParams(cell.slope))
        np.testing.assert_allclose(ds.actions[i], exp, atol=1e-10)
    again = S.gen_dataset(recipe, seed=1, episode_steps=40)
    assert np.array_equal(again.observations, ds.observations)


def test_recipe_round_trip_and_errors():
    cells = S.default_recipe(601)
    assert sum(c.pairs for c in cells) == 601
    back = S.parse_recipe(S.format_recipe(cells) + "\n# comment\n")
    assert [(c.velocity, c.pairs) for c in back] == [(c.velocity, c.pairs) for c in cells]
    np.testing.assert_allclose([c.slope for c in back], [c.slope for c in cells], rtol=1e-15)
    with pytest.raises(ValueError, match="missing pairs"):
        S.parse_recipe("velocity=0.3 slope_deg=0")
    with pytest.raises(ValueError, match="unknown keys"):
        S.parse_recipe("velocity=0.3 pairs=1 colour=red")


def test_bimodal_ground_truth():
    cond, act = S.bimodal_sample(np.random.default_rng(0), 20_000)
    neg, pos, mid = S.bimodal_eval(act)
    assert abs(neg - 0.5) < 0.02 and abs(pos - 0.5) < 0.02 and mid == 0.0
    assert S.bimodal_eval([0.0, 0.25, -0.25, 0.1]) == (0.25, 0.25, 0.5)
    assert np.all(np.abs(cond) <= 1.0)


def test_gaussian_toy_optimal_eps_is_posterior_mean():
    task = S.GaussianToyTask()
    s = linear_schedule()
    r = np.random.default_rng(2)
    a0, eps = task.sample(r, 200_000), r.standard_normal((200_000, 1))
    ab = s.alpha_bar(30)
    at = math.sqrt(ab) * a0 + math.sqrt(1 - ab) * eps
    resid = eps - task.optimal_eps(at, 30, s)
    # Optimal predictor leaves a residual uncorrelated with its input.
    assert abs(np.mean(resid)) < 0.01 and abs(np.corrcoef(resid[:, 0], at[:, 0])[0, 1]) < 0.01

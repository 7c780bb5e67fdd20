import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from dozersim.config import scenario_noise
from dozersim.env import (
    EnvConfig,
    ObservationSpec,
    export_dataset,
    init_episode,
    load_dataset,
    render_observation,
    sample_observations,
    spawn_and_run,
    step_episode,
    world_to_body,
)
from dozersim.errors import OutOfBounds
from dozersim.geometry import Pose
from dozersim.noise import NoiseConfig
from dozersim.policy import WaypointAction
from dozersim.terrain import DozerBody, Heightmap, blob_heights, read_pgm16, spawn_episode

SPEC = ObservationSpec()


def rough_map(seed=0):
    rng = np.random.default_rng(seed)
    hm = Heightmap(0.025, np.zeros((100, 100)), 0.0, 2.1)
    for _ in range(6):
        hm.h += blob_heights(hm, rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.2), rng.uniform(0.05, 0.12),
                             rng.uniform(0.002, 0.01))
    return hm


# --- rendering ----------------------------------------------------------------


def test_true_pose_window_is_direct_crop():
    hm = rough_map()
    obs = render_observation(hm, Pose.planar(0.5, 1.25, 0.0), SPEC)
    # sample points land on cell centres for this pose
    np.testing.assert_allclose(obs.window, hm.h[14:78, 18:82], atol=1e-12)
    assert obs.window.shape == (64, 64)


def test_offset_shifts_window_by_two_pixels():
    hm = rough_map(1)
    true = render_observation(hm, Pose.planar(0.6, 1.2, 0.0), SPEC).window
    est = render_observation(hm, Pose.planar(0.65, 1.2, 0.0), SPEC).window
    a, b = true - true.mean(), est - est.mean()
    xc = signal.correlate(a, b, mode="full")
    i, j = np.unravel_index(np.argmax(xc), xc.shape)
    assert (i - (b.shape[0] - 1), j - (b.shape[1] - 1)) == (2, 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 2.2), st.floats(0.3, 2.2), st.floats(-math.pi, math.pi))
def test_flat_map_constant_window(x, y, yaw):
    hm = Heightmap(0.025, np.full((100, 100), 0.07), 0.07)
    w = render_observation(hm, Pose.planar(x, y, yaw), SPEC).window
    np.testing.assert_allclose(w, 0.07, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.8, 1.7), st.floats(0.8, 1.7), st.floats(-math.pi, math.pi), st.integers(-6, 6))
def test_translation_equivariance(x, y, yaw, n):
    hm = rough_map(2)
    m = SPEC.m_per_px
    base = render_observation(hm, Pose.planar(x, y, yaw), SPEC).window
    moved = render_observation(hm, Pose.planar(x + n * m * math.cos(yaw), y + n * m * math.sin(yaw), yaw),
                               SPEC).window
    lo, hi = max(0, -n), min(64, 64 - n)
    np.testing.assert_allclose(moved[lo:hi], base[lo + n:hi + n], atol=1e-9)


def test_off_map_centre_raises():
    with pytest.raises(OutOfBounds):
        render_observation(rough_map(), Pose.planar(-0.1, 1.0, 0.0), SPEC)


def test_off_map_cells_use_target_height():
    hm = Heightmap(0.025, np.full((100, 100), 0.2), 0.05)
    w = render_observation(hm, Pose.planar(2.4, 1.25, 0.0), SPEC).window
    np.testing.assert_allclose(w[-10:], 0.05, atol=1e-15)
    np.testing.assert_allclose(w[:10], 0.2, atol=1e-15)


# --- covariance sampling ------------------------------------------------------


def test_zero_covariance_reproduces_observation():
    hm = rough_map(3)
    est = Pose.planar(0.7, 1.1, 0.3)
    ref = render_observation(hm, est, SPEC)
    out = sample_observations(hm, est, np.zeros((3, 3)), 4, np.random.default_rng(0), spec=SPEC)
    assert len(out) == 4
    for s in out:
        np.testing.assert_array_equal(s.obs.window, ref.window)


def test_sample_moments_ten_thousand():
    hm = rough_map(4)
    est = Pose.planar(1.2, 1.3, 0.4)
    cov = np.diag([0.03 ** 2, 0.02 ** 2, math.radians(3) ** 2])
    cov[0, 1] = cov[1, 0] = 0.5 * 0.03 * 0.02
    k = 10_000
    out = sample_observations(hm, est, cov, k, np.random.default_rng(5), spec=SPEC)
    draws = np.array([[s.sample_pose.p[0], s.sample_pose.p[1], s.sample_pose.yaw] for s in out])
    mean = np.array([1.2, 1.3, 0.4])
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * sd / math.sqrt(k))
    emp = np.cov(draws.T)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05


def test_full_filter_covariance_uses_pose_marginal():
    P = np.eye(15) * 1e-8
    P[0, 0], P[1, 1], P[5, 5] = 0.01 ** 2, 0.02 ** 2, 0.05 ** 2
    P[2, 2] = 100.0  # ignored
    out = sample_observations(rough_map(), Pose.planar(1.2, 1.2, 0.0), P, 2000, np.random.default_rng(1), spec=SPEC)
    draws = np.array([[s.sample_pose.p[0], s.sample_pose.p[1], s.sample_pose.yaw] for s in out])
    np.testing.assert_allclose(draws.std(axis=0), [0.01, 0.02, 0.05], rtol=0.06)
    assert all(s.sample_pose.p[2] == 0.0 for s in out)


def test_labels_move_opposite_to_perturbation():
    hm = rough_map()
    est = Pose.planar(1.0, 1.0, 0.0)
    action = WaypointAction([2.0, 1.0], [0.5, 1.0])
    out = sample_observations(hm, est, np.diag([0.05 ** 2, 0.05 ** 2, 0.0]), 50, np.random.default_rng(2),
                              labels=action, spec=SPEC)
    g0, _ = world_to_body(est, action.goto)
    for s in out:
        dx = s.sample_pose.p[0] - est.p[0]
        dy = s.sample_pose.p[1] - est.p[1]
        assert s.labels.goto[0] == pytest.approx(g0 - dx, abs=1e-12)
        assert s.labels.goto[1] == pytest.approx(-dy, abs=1e-12)
        assert np.all(np.isfinite(s.labels.reverse_to))


def test_non_psd_covariance_rejected():
    with pytest.raises(ValueError):
        sample_observations(rough_map(), Pose.planar(1, 1, 0), -np.eye(3), 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_observations(rough_map(), Pose.planar(1, 1, 0), np.eye(3), 0, np.random.default_rng(0))


def test_off_map_draws_are_redrawn():
    out = sample_observations(rough_map(), Pose.planar(0.02, 1.0, 0.0), np.diag([0.05 ** 2, 0.0, 0.0]), 200,
                              np.random.default_rng(3), spec=SPEC)
    assert all(0.0 <= s.sample_pose.p[0] <= 2.5 for s in out)


# --- dataset export -----------------------------------------------------------


def test_export_single_sample(tmp_path):
    hm = rough_map()
    s = sample_observations(hm, Pose.planar(1, 1, 0), np.zeros((3, 3)), 1, np.random.default_rng(0),
                            labels=WaypointAction([2, 1], [0.5, 1]), spec=SPEC)
    manifest = export_dataset(s, tmp_path)
    files = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    assert files == ["0/0/0.csv", "0/0/0.pgm", "manifest.jsonl"]
    assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 1
    assert manifest[0]["labels"]["goto"] == pytest.approx([1.0, 0.0])


def test_export_eight_per_leg_and_round_trip(tmp_path):
    hm = rough_map()
    rng = np.random.default_rng(7)
    samples = []
    for leg in (1, 0):  # written out of order on purpose
        for s in sample_observations(hm, Pose.planar(1.0, 1.0 + 0.2 * leg, 0.1), np.diag([1e-4, 1e-4, 1e-3]), 8,
                                     rng, labels=WaypointAction([2, 1], [0.5, 1]), spec=SPEC):
            s.episode, s.leg, s.cov_id = 3, leg, f"3/{leg}"
            samples.append(s)
    export_dataset(samples, tmp_path)
    lines = [json.loads(x) for x in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    assert len(lines) == 16
    assert [(r["leg"], r["k"]) for r in lines] == [(lg, k) for lg in (0, 1) for k in range(8)]
    by_key = {(s.leg, s.index): s for s in samples}
    for rec, win in load_dataset(tmp_path):
        np.testing.assert_array_equal(win, by_key[(rec["leg"], rec["k"])].obs.window)
        assert rec["covariance_id"] == f"3/{rec['leg']}"
        assert read_pgm16(tmp_path / rec["pgm"]).shape == (64, 64)


def test_export_requires_samples(tmp_path):
    with pytest.raises(ValueError):
        export_dataset([], tmp_path)


# --- episodes -----------------------------------------------------------------


def _episode(hm, start, noise=None, cfg=None):
    d = DozerBody(Pose.planar(*start))
    return init_episode(hm, d, noise or NoiseConfig(), cfg or EnvConfig())


def test_flat_leg_completes_without_success():
    hm = Heightmap(0.025, np.zeros((100, 100)), 0.0, 2.1)
    st_ = _episode(hm, (0.5, 1.0, 0.0))
    st_.initial_volume = 1.0  # keep the episode open on an empty map
    _, events = step_episode(st_, WaypointAction([1.5, 1.0], [0.6, 1.0]))
    ev = events[0]
    assert not ev.success and not ev.diverged
    assert ev.duration > 0


def test_noise_less_push_success_and_time():
    hm = Heightmap(0.025, np.zeros((100, 100)), 0.0, 2.1)
    hm.h += blob_heights(hm, 1.0, 1.25, 0.05, 0.007)
    st_ = _episode(hm, (0.45, 1.25, 0.0))
    st_.cfg.clear_fraction = 0.0
    goto, back = np.array([1.5, 1.25]), np.array([0.45, 1.25])
    _, events = step_episode(st_, WaypointAction(goto, back))
    ev = events[0]
    assert ev.success
    assert ev.peak_load > 0.5 * 0.010
    dist = np.linalg.norm(goto - [0.45, 1.25]) + np.linalg.norm(goto - back)
    assert abs(ev.duration - dist / 0.3) / (dist / 0.3) < 0.05
    err = np.abs(np.array(st_.log)[:, 1:3] - np.array(st_.log)[:, 4:6])
    assert err.max() < 1e-6


def test_step_after_termination_rejected():
    hm = Heightmap(0.025, np.zeros((100, 100)), 0.0, 2.1)
    st_ = _episode(hm, (0.5, 1.0, 0.0))
    st_.terminated = True
    with pytest.raises(RuntimeError):
        step_episode(st_, WaypointAction([1, 1], [0.5, 1]))


def test_noise_less_episode_clears_and_conserves():
    res = spawn_and_run(0, 0, NoiseConfig())
    assert res.reason == "cleared"
    assert res.metrics.uncleared_volume < 0.02 * res.initial_volume
    assert all(res.success_flags())
    final_load = res.log[-1, 7]
    total = res.final_map.volume() + res.dumped + final_load
    assert abs(total - res.initial_volume) < 1e-9 * res.initial_volume
    # fused pose equals truth throughout
    assert np.max(np.abs(res.log[:, 1:3] - res.log[:, 4:6])) < 1e-6


def test_episode_determinism():
    noise = scenario_noise("sensor_fusion")
    a = spawn_and_run(5, 11, noise)
    b = spawn_and_run(5, 11, noise)
    np.testing.assert_array_equal(a.log, b.log)
    np.testing.assert_array_equal(a.final_map.h, b.final_map.h)
    c = spawn_and_run(5, 12, noise)
    assert not np.array_equal(a.log, c.log)


def test_time_budget_terminates():
    res = spawn_and_run(1, 1, NoiseConfig(), EnvConfig(time_budget=5.0))
    assert res.reason == "time budget"
    assert res.metrics.episode_time == pytest.approx(5.0)


def test_extreme_noise_misses_some_piles():
    noise = scenario_noise("extreme")
    misses = 0
    for seed in range(6):
        misses += sum(not s for s in spawn_and_run(seed, seed, noise).success_flags())
    assert misses > 0


def test_no_sand_ends_after_survey_cycle():
    hm, d = spawn_episode(np.random.default_rng(0))
    hm.h[:] = 0.0
    hm.h[95, 95] = 0.01  # inside the dump strip, never in view from the lanes
    from dozersim.env import run_episode
    res = run_episode(hm, d, NoiseConfig())
    assert res.reason == "no sand visible"
    assert [leg.kind for leg in res.legs] == ["survey"] * len(res.legs)

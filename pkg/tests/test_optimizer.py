import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gffopt import link, nn, optimizer as opt, perf
from gffopt.exceptions import UsageError
from gffopt.grid import total_dbm

FLAT17 = link.LaunchProfile.flat(17.0)


@pytest.fixture(scope="module")
def env2(surrogate, calibrated_nf):
    return opt.LinkEnv(link.design_link(2), surrogate, calibrated_nf)


@pytest.fixture(scope="module")
def trained(env2):
    return opt.train(env2, opt.EpisodeConfig(seed=0))


def test_bands_partition_channels():
    idx = opt.band_index()
    assert len(idx) == 89
    assert np.bincount(idx).tolist() == [13, 13, 13, 13, 13, 12, 12]
    assert np.all(np.diff(idx) >= 0)
    masks = opt.action_masks()
    assert masks.shape == (128, 89)
    assert not masks[0].any() and masks[127].all()
    assert masks[1, :13].all() and not masks[1, 13:].any()


def test_no_op_actions():
    p = opt.random_spectrum(np.random.default_rng(0))
    np.testing.assert_array_equal(opt.apply_action(p, 0).power_dbm, p.power_dbm)
    np.testing.assert_allclose(opt.apply_action(p, 127).power_dbm, p.power_dbm, atol=1e-12)


def test_action_one_on_flat():
    q = opt.apply_action(FLAT17, 1)
    diff = q.power_dbm[0] - q.power_dbm[-1]
    assert diff == pytest.approx(0.5, abs=1e-12)
    # the boosted band keeps 0.5 dB minus the renormalization offset
    offset = 10 * np.log10((13 * 10**0.05 + 76) / 89)
    assert q.power_dbm[0] - FLAT17.power_dbm[0] == pytest.approx(0.5 - offset, abs=1e-12)
    assert q.power_w.sum() == pytest.approx(FLAT17.power_w.sum(), rel=1e-12)


def test_action_range():
    with pytest.raises(UsageError):
        opt.apply_action(FLAT17, 128)
    with pytest.raises(UsageError):
        opt.apply_action(FLAT17, -1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 127), min_size=1, max_size=30))
def test_actions_conserve_top(seed, actions):
    p = opt.random_spectrum(np.random.default_rng(seed))
    top = p.power_w.sum()
    for a in actions:
        p = opt.apply_action(p, a)
    assert np.all(np.isfinite(p.power_dbm))
    assert p.power_w.sum() == pytest.approx(top, rel=1e-12)


def test_random_spectrum_constraints():
    rng = np.random.default_rng(3)
    tops = []
    for _ in range(1000):
        p = opt.random_spectrum(rng)
        tops.append(p.top_dbm)
        assert p.excursion_db <= 6.0 + 1e-9
    tops = np.array(tops)
    assert tops.min() >= 16.0 and tops.max() <= 18.0
    assert tops.min() <= 16.05 and tops.max() >= 17.95


def test_random_spectrum_same_seed():
    a = opt.random_spectrum(np.random.default_rng(9))
    b = opt.random_spectrum(np.random.default_rng(9))
    np.testing.assert_array_equal(a.power_dbm, b.power_dbm)


def test_all_actions_stay_in_envelope(env2, caplog):
    p = opt.random_spectrum(np.random.default_rng(4))
    with caplog.at_level(logging.WARNING):
        for a in range(128):
            q = opt.apply_action(p, a)
            assert np.all(np.isfinite(q.power_dbm))
            assert np.isfinite(env2.capacity(q))
    assert not [r for r in caplog.records if "envelope" in r.message]


def test_step_no_op_and_purity(env2):
    p = opt.random_spectrum(np.random.default_rng(1))
    _, r, _, _ = env2.step(p, 0)
    assert r == 0.0
    fresh = opt.LinkEnv(env2.design, env2.model, env2.nf_db)
    assert env2.step(p, 37)[1] == fresh.step(p, 37)[1]


def test_reward_is_capacity_difference(env2):
    p = opt.random_spectrum(np.random.default_rng(2))
    p2, r, _, res = env2.step(p, 5)
    assert r == pytest.approx(env2.capacity(p2) - env2.capacity(p), abs=1e-12)
    assert res.capacity_tbps == env2.capacity(p2)


def test_directional_probe(surrogate, calibrated_nf):
    """Boosting the weakest sub-band must beat boosting everything else, for some state."""
    env = opt.LinkEnv(link.design_link(7), surrogate, calibrated_nf)
    bands = opt.band_index()
    wins = 0
    rng = np.random.default_rng(0)
    for p in [FLAT17] + [opt.random_spectrum(rng) for _ in range(4)]:
        rep = perf.evaluate(p, env.design, surrogate, calibrated_nf, mode="extrapolated")
        weakest = int(np.argmin([rep.snr_db[bands == b].mean() for b in range(7)]))
        toward = env.step(p, 1 << weakest)[1]
        away = env.step(p, 127 ^ (1 << weakest))[1]
        wins += toward > away
    assert wins >= 1


def test_infeasible_step_penalized(surrogate, calibrated_nf):
    env = opt.LinkEnv(link.design_link(10), surrogate, calibrated_nf)
    assert not env.evaluate(FLAT17).feasible
    p2, r, done, _ = env.step(opt.apply_action(FLAT17, 0), 3)
    assert r == opt.INFEASIBLE_PENALTY_TBPS and done


def test_uniform_policy_sampling():
    pol = opt.uniform_policy()
    pr = pol.probs(pol.features(FLAT17.power_dbm))
    np.testing.assert_allclose(pr, 1 / 128, rtol=1e-14)
    rng = np.random.default_rng(0)
    n = 10_000
    counts = np.bincount([opt._sample(pr, rng) for _ in range(n)], minlength=128)
    sigma = np.sqrt(n * (1 / 128) * (127 / 128))
    assert np.abs(counts - n / 128).max() < 4 * sigma
    assert np.mean(np.abs(counts - n / 128) < 3 * sigma) > 0.98
    assert stats.chisquare(counts).pvalue > 1e-3


def test_fresh_policy_is_uniform():
    pol = opt.Policy.create(np.random.default_rng(5))
    x = pol.features(opt.random_spectrum(np.random.default_rng(5)).power_dbm)
    np.testing.assert_allclose(pol.probs(x), 1 / 128, rtol=1e-14)


def test_policy_probs_match_forward():
    pol = opt.Policy.create(np.random.default_rng(6))
    pol.net.layers[-1].weights[:] = np.random.default_rng(7).normal(0, 0.1, (128, 128))
    x = pol.features(opt.random_spectrum(np.random.default_rng(8)).power_dbm)
    np.testing.assert_allclose(pol.probs(x), nn.forward(pol.net, x), rtol=1e-12)
    assert pol.probs(x).sum() == pytest.approx(1.0, abs=1e-12)


def test_episode_trace(env2):
    pol = opt.Policy.create(np.random.default_rng(1))
    pol.net.layers[-1].weights[:] = np.random.default_rng(2).normal(0, 0.05, (128, 128))
    tr = opt.run_episode(pol, env2, np.random.default_rng(3), max_steps=40)
    assert 1 <= len(tr) <= 40
    assert len(tr.spectra) == len(tr.capacities) == len(tr) + 1
    assert tr.best_capacity == max(tr.capacities)
    assert tr.episode_return == pytest.approx(sum(tr.rewards))
    for s, a, lp in zip(tr.spectra, tr.actions, tr.log_probs):
        assert lp == pytest.approx(np.log(nn.forward(pol.net, pol.features(s.power_dbm))[a]), rel=1e-10)


def test_episode_deterministic(env2):
    pol = opt.uniform_policy()
    a = opt.run_episode(pol, env2, np.random.default_rng(11), max_steps=25)
    b = opt.run_episode(pol, env2, np.random.default_rng(11), max_steps=25)
    assert a.actions == b.actions and a.rewards == b.rewards


def test_returns_to_go():
    np.testing.assert_allclose(opt.returns_to_go([1.0, -2.0, 0.5]), [-0.5, -1.5, 0.5])
    np.testing.assert_allclose(opt.returns_to_go([1.0, 1.0], 0.5), [1.5, 1.0])


class ZeroRewardEnv(opt.LinkEnv):
    def step(self, p, action):
        p2 = opt.apply_action(p, action)
        return p2, 0.0, False, opt.StepResult(1.0, 10.0)

    def evaluate(self, p):
        return opt.StepResult(1.0, 10.0)


def test_zero_reward_leaves_policy_unchanged(env2):
    env = ZeroRewardEnv(env2.design, env2.model, env2.nf_db)
    pol = opt.Policy.create(np.random.default_rng(0))
    before = [p.copy() for p in pol.net.parameters()]
    opt.train(env, opt.EpisodeConfig(episodes=3, max_steps=10), policy=pol)
    for a, b in zip(before, pol.net.parameters()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_training_deterministic(surrogate, calibrated_nf):
    cfg = opt.EpisodeConfig(episodes=3, max_steps=15, seed=4)
    runs = [opt.train(opt.LinkEnv(link.design_link(2), surrogate, calibrated_nf), cfg) for _ in range(2)]
    assert runs[0].returns == runs[1].returns
    assert runs[0].best_capacity == runs[1].best_capacity
    for a, b in zip(runs[0].policy.net.parameters(), runs[1].policy.net.parameters()):
        np.testing.assert_array_equal(a, b)


def test_training_run(trained, env2):
    assert len(trained.returns) == 100
    assert np.all(np.diff(trained.best_curve) >= 0)
    assert trained.best_curve[-1] == trained.best_capacity
    assert np.mean(trained.returns[-10:]) >= np.mean(trained.returns[:10])
    assert 16.0 <= trained.best_spectrum.top_dbm <= 18.0
    assert env2.capacity(trained.best_spectrum) == pytest.approx(trained.best_capacity, abs=1e-12)


def test_optimized_beats_flat_and_modes_agree(trained, surrogate, calibrated_nf):
    d = link.design_link(2)
    rep = opt.evaluate_optimized(trained.best_spectrum, d, surrogate, calibrated_nf)
    flat = opt.evaluate_optimized(FLAT17, d, surrogate, calibrated_nf)
    assert rep.capacity_tbps > flat.capacity_tbps
    assert abs(rep.capacity_tbps - trained.best_capacity) < 0.01


def test_random_search_budget(env2):
    res = opt.random_search(env2, 700, seed=3)
    assert res.evaluations == 700
    assert np.all(np.diff(res.best_curve) >= 0)


def test_spectrum_csv_roundtrip(tmp_path):
    p = opt.random_spectrum(np.random.default_rng(12))
    opt.write_spectrum(p, tmp_path / "s.csv", comment="config_sha256=abc")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# config_sha256=abc" and lines[1] == "channel,freq_thz,power_dbm"
    back = opt.read_spectrum(tmp_path / "s.csv")
    np.testing.assert_allclose(back.power_dbm, p.power_dbm, rtol=1e-11)
    assert total_dbm(back.power_dbm) == pytest.approx(p.top_dbm, abs=1e-9)

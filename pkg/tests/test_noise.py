import numpy as np
import pytest

from roundabout_rl.env import (
    AV_POS_INDICES,
    ENTRANCE_DIST_BLOCK,
    OBS_SIZE,
    RING_POS_INDICES,
)
from roundabout_rl.noise import (
    ADVERSARY_ACTION_SIZE,
    ADVERSARY_TARGETS,
    EXEMPT_INDICES,
    GaussianChannel,
    NoiseProfile,
    adversarial_perturb,
    gate_adversary_action,
    gaussian_perturb_action,
    gaussian_perturb_state,
)
from roundabout_rl.traffic import ConfigError


def test_profile_std_classes():
    p = NoiseProfile(mode="state")
    std = p.state_std
    for i in range(ENTRANCE_DIST_BLOCK.start, ENTRANCE_DIST_BLOCK.stop):
        assert std[i] == 0.05
    for i in AV_POS_INDICES + RING_POS_INDICES:
        assert std[i] == 0.02
    for i in EXEMPT_INDICES:
        assert std[i] == 0.0
    others = set(range(OBS_SIZE)) - set(EXEMPT_INDICES) - set(AV_POS_INDICES) \
        - set(RING_POS_INDICES) - set(range(ENTRANCE_DIST_BLOCK.start, ENTRANCE_DIST_BLOCK.stop))
    for i in others:
        assert std[i] == 0.1


def test_profile_rejects_bad_mode_and_negative_std():
    with pytest.raises(ConfigError):
        NoiseProfile(mode="everything")
    with pytest.raises(ConfigError):
        NoiseProfile(action_std=-0.1)


def test_state_perturbation_zero_std_is_identity():
    p = NoiseProfile(mode="state", merge_edge_std=0.0, absolute_pos_std=0.0, default_std=0.0)
    obs = np.linspace(0.0, 1.0, OBS_SIZE)
    rng = np.random.default_rng(0)
    out = gaussian_perturb_state(obs, p, rng)
    assert np.array_equal(out, obs)


def test_state_perturbation_exempt_elements_bit_unchanged():
    p = NoiseProfile(mode="state")
    obs = np.full(OBS_SIZE, 0.5)
    obs[list(EXEMPT_INDICES)] = [0.4, 0.875]
    for seed in range(200):
        out = gaussian_perturb_state(obs, p, np.random.default_rng(seed))
        assert out[EXEMPT_INDICES[0]] == 0.4
        assert out[EXEMPT_INDICES[1]] == 0.875


def test_state_perturbation_std_estimate():
    p = NoiseProfile(mode="state")
    rng = np.random.default_rng(1)
    obs = np.full(OBS_SIZE, 0.5)
    draws = np.array([gaussian_perturb_state(obs, p, rng) for _ in range(20_000)])
    deltas = draws - obs
    # a default-std element, mid-range so the clamp never engages
    assert deltas[:, 1].std() == pytest.approx(0.1, rel=0.05)
    assert deltas[:, ENTRANCE_DIST_BLOCK.start].std() == pytest.approx(0.05, rel=0.05)
    assert deltas[:, 0].std() == pytest.approx(0.02, rel=0.05)


def test_state_perturbation_clamps_to_unit_interval():
    p = NoiseProfile(mode="state")
    rng = np.random.default_rng(2)
    lo = np.zeros(OBS_SIZE)
    hi = np.ones(OBS_SIZE)
    for _ in range(50):
        assert np.all(gaussian_perturb_state(lo, p, rng) >= 0.0)
        assert np.all(gaussian_perturb_state(hi, p, rng) <= 1.0)


def test_action_perturbation_zero_std_is_identity():
    p = NoiseProfile(mode="action", action_std=0.0)
    a = np.array([0.3, -1.2])
    out = gaussian_perturb_action(a, p, np.random.default_rng(0))
    assert np.array_equal(out, a)


def test_action_perturbation_moments():
    p = NoiseProfile(mode="action")
    rng = np.random.default_rng(3)
    a = np.zeros(2)
    draws = np.array([gaussian_perturb_action(a, p, rng) for _ in range(100_000)])
    assert abs(draws.mean()) < 0.01
    assert draws.std() == pytest.approx(0.5, abs=0.01)


# -- adversary ---------------------------------------------------------------

def test_adversary_targets_are_av_features_and_entrance_distances():
    assert len(ADVERSARY_TARGETS) == 20
    assert ADVERSARY_TARGETS[:8] == tuple(range(0, 8))
    assert ADVERSARY_TARGETS[8:] == tuple(range(34, 46))
    assert ADVERSARY_ACTION_SIZE == 22


def test_adversarial_zero_action_is_identity():
    obs = np.linspace(0.0, 1.0, OBS_SIZE)
    action = np.array([0.5, -0.5])
    new_obs, new_action = adversarial_perturb(obs, action, np.zeros(22))
    assert np.array_equal(new_obs, obs)
    assert np.array_equal(new_action, action)


def test_adversarial_action_shift_scaled():
    adv = np.zeros(22)
    adv[0] = 1.0
    _, new_action = adversarial_perturb(np.full(OBS_SIZE, 0.5), np.array([0.2, 0.2]), adv)
    assert new_action[0] == pytest.approx(0.3)
    assert new_action[1] == pytest.approx(0.2)


def test_adversarial_obs_clamped_at_boundary():
    obs = np.full(OBS_SIZE, 0.95)
    adv = np.ones(22)
    new_obs, _ = adversarial_perturb(obs, np.zeros(2), adv)
    assert np.all(new_obs[list(ADVERSARY_TARGETS)] == 1.0)
    untouched = [i for i in range(OBS_SIZE) if i not in ADVERSARY_TARGETS]
    assert np.all(new_obs[untouched] == 0.95)


def test_adversarial_inputs_clamped_and_bounded():
    obs = np.full(OBS_SIZE, 0.5)
    adv = np.full(22, 10.0)   # out of range: clamped to 1 before scaling
    new_obs, new_action = adversarial_perturb(obs, np.zeros(2), adv)
    assert np.all(np.abs(new_obs[list(ADVERSARY_TARGETS)] - 0.5) <= 0.1 + 1e-12)
    assert np.all(np.abs(new_action) <= 0.1 + 1e-12)


def test_adversarial_rejects_bad_target_list():
    with pytest.raises(ConfigError):
        adversarial_perturb(np.zeros(OBS_SIZE), np.zeros(2), np.zeros(22), targets=(1, 2, 3))


def test_adversarial_exempt_indices_never_targeted():
    assert not set(EXEMPT_INDICES) & set(ADVERSARY_TARGETS)


def test_gate_adversary_action_modes():
    adv = np.ones(22)
    gated = gate_adversary_action(adv, "action")
    assert np.all(gated[:2] == 1.0) and np.all(gated[2:] == 0.0)
    gated = gate_adversary_action(adv, "state")
    assert np.all(gated[:2] == 0.0) and np.all(gated[2:] == 1.0)
    assert np.all(gate_adversary_action(adv, "none") == 0.0)
    assert np.all(gate_adversary_action(adv, "action_state") == 1.0)


def test_gaussian_channel_respects_mode():
    rng = np.random.default_rng(0)
    obs = np.full(OBS_SIZE, 0.5)
    action = np.zeros(2)
    chan = GaussianChannel(NoiseProfile(mode="state"), rng)
    assert not np.array_equal(chan.observe(obs), obs)
    assert np.array_equal(chan.act(action), action)
    chan = GaussianChannel(NoiseProfile(mode="action"), rng)
    assert np.array_equal(chan.observe(obs), obs)
    assert not np.array_equal(chan.act(action), action)

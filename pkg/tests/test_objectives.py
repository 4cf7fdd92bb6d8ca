import numpy as np
import pytest

from dna_rl.models import nn_core, objectives
from dna_rl.models.configs import ClipConfig, DistilConfig

SPEC = nn_core.NetSpec(
    input_dim=3,
    hidden_widths=(5,),
    heads=(("logits", 3), ("value", 1)),
    activation="tanh",
)
RATIOS = np.array([0.5, 0.95, 1.05, 1.5])


def max_relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference(loss_fn, params, h=1e-5):
    numeric = np.zeros_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (loss_fn(up) - loss_fn(down)) / (2 * h)
    return numeric


def analytic_gradient(loss_fn, params, obs):
    out, cache = nn_core.forward_with_cache(SPEC, params, obs)
    result = loss_fn(out)
    return nn_core.backward(SPEC, params, obs, result.head_grads, cache)


def make_case(seed, n=8):
    rng = np.random.default_rng(seed)
    params = nn_core.init_params(SPEC, rng)
    params += rng.normal(scale=0.3, size=params.shape)
    obs = rng.normal(size=(n, 3))
    actions = rng.integers(0, 3, size=n)
    advantages = rng.normal(size=n)
    logits = nn_core.forward(SPEC, params, obs)["logits"]
    new_logp = nn_core.action_log_prob(logits, actions)
    # Ratios sit well inside or well outside the clip range so the kink never
    # falls inside the difference stencil
    old_logp = new_logp - np.log(rng.choice(RATIOS, size=n))
    return rng, params, obs, actions, advantages, old_logp


def test_clip_loss_gradient_matches_finite_differences():
    cfg = ClipConfig(epsilon=0.2, entropy_coef=0.01)
    worst = 0.0
    for seed in range(100):
        _, params, obs, actions, adv, old_logp = make_case(seed)

        def loss_of(out):
            return objectives.clip_surrogate_loss(out["logits"], actions, old_logp, adv, cfg)

        analytic = analytic_gradient(loss_of, params, obs)
        numeric = finite_difference(lambda p: loss_of(nn_core.forward(SPEC, p, obs)).loss, params)
        worst = max(worst, max_relative_error(analytic, numeric))
    assert worst < 1e-5


def test_value_loss_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(100):
        rng, params, obs, *_ = make_case(seed)
        targets = rng.normal(size=obs.shape[0])

        def loss_of(out):
            return objectives.value_mse_loss(out["value"], targets)

        analytic = analytic_gradient(loss_of, params, obs)
        numeric = finite_difference(lambda p: loss_of(nn_core.forward(SPEC, p, obs)).loss, params)
        worst = max(worst, max_relative_error(analytic, numeric))
    assert worst < 1e-5


def test_distillation_gradient_matches_finite_differences():
    cfg = DistilConfig(beta=1.0)
    worst = 0.0
    for seed in range(100):
        rng, params, obs, *_ = make_case(seed)
        targets = rng.normal(size=obs.shape[0])
        old_logits = nn_core.forward(SPEC, params + rng.normal(scale=0.2, size=params.shape), obs)["logits"]

        def loss_of(out):
            return objectives.distillation_loss(out["value"], targets, out["logits"], old_logits, cfg)

        analytic = analytic_gradient(loss_of, params, obs)
        numeric = finite_difference(lambda p: loss_of(nn_core.forward(SPEC, p, obs)).loss, params)
        worst = max(worst, max_relative_error(analytic, numeric))
    assert worst < 1e-5


def test_joint_loss_gradient_matches_finite_differences():
    cfg = ClipConfig(epsilon=0.2, entropy_coef=0.01)
    for seed in range(20):
        rng, params, obs, actions, adv, old_logp = make_case(seed)
        targets = rng.normal(size=obs.shape[0])

        def loss_of(out):
            return objectives.joint_ppo_loss(out["logits"], out["value"], actions, old_logp, adv, targets, cfg)

        analytic = analytic_gradient(loss_of, params, obs)
        numeric = finite_difference(lambda p: loss_of(nn_core.forward(SPEC, p, obs)).loss, params)
        assert max_relative_error(analytic, numeric) < 1e-5


def test_zero_advantages_without_entropy_have_zero_gradient(rng):
    logits = rng.normal(size=(5, 3))
    actions = rng.integers(0, 3, size=5)
    old = nn_core.action_log_prob(logits, actions) + 0.3
    result = objectives.clip_surrogate_loss(logits, actions, old, np.zeros(5), ClipConfig(entropy_coef=0.0))
    assert result.loss == 0.0
    assert np.all(result.head_grads["logits"] == 0.0)


def test_ratio_one_gives_mean_advantage(rng):
    logits = rng.normal(size=(6, 4))
    actions = rng.integers(0, 4, size=6)
    adv = rng.normal(size=6)
    old = nn_core.action_log_prob(logits, actions)
    result = objectives.clip_surrogate_loss(logits, actions, old, adv, ClipConfig(entropy_coef=0.0))
    assert result.loss == pytest.approx(-adv.mean())
    assert result.stats["clip_frac"] == 0.0
    assert result.stats["approx_kl"] == pytest.approx(0.0, abs=1e-15)


def test_clipped_sample_has_no_surrogate_gradient():
    logits = np.array([[0.0, 0.0]])
    actions = np.array([0])
    # ratio = 1.5 with a positive advantage: the clipped branch wins
    old = nn_core.action_log_prob(logits, actions) - np.log(1.5)
    result = objectives.clip_surrogate_loss(logits, actions, old, np.array([1.0]), ClipConfig(entropy_coef=0.0))
    assert np.all(result.head_grads["logits"] == 0.0)
    assert result.loss == pytest.approx(-1.2)
    assert result.stats["clip_frac"] == 1.0


def test_entropy_gradient_survives_the_clip():
    logits = np.array([[1.0, 0.0]])
    actions = np.array([0])
    old = nn_core.action_log_prob(logits, actions) - np.log(1.5)
    result = objectives.clip_surrogate_loss(logits, actions, old, np.array([1.0]), ClipConfig(entropy_coef=0.1))
    # ascending entropy pushes the logits together
    assert result.head_grads["logits"][0, 0] > 0.0
    assert result.head_grads["logits"][0, 1] < 0.0


def test_losses_reject_non_finite_input():
    with pytest.raises(ValueError):
        objectives.value_mse_loss(np.array([np.nan]), np.array([0.0]))
    with pytest.raises(ValueError):
        objectives.clip_surrogate_loss(
            np.zeros((1, 2)), np.array([0]), np.array([np.inf]), np.array([1.0]), ClipConfig()
        )


def test_mismatched_shapes_raise():
    with pytest.raises(ValueError):
        objectives.value_mse_loss(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        objectives.clip_surrogate_loss(np.zeros((2, 2)), np.array([0]), np.zeros(2), np.zeros(2), ClipConfig())


def test_value_mse():
    result = objectives.value_mse_loss(np.array([1.0, 3.0]), np.array([1.0, 1.0]))
    assert result.loss == pytest.approx(2.0)
    np.testing.assert_allclose(result.head_grads["value"], [[0.0], [2.0]])


def test_distillation_is_zero_at_the_snapshot(rng):
    logits = rng.normal(size=(4, 3))
    v = rng.normal(size=4)
    result = objectives.distillation_loss(v, v, logits, logits, DistilConfig(beta=5.0))
    assert result.loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(result.head_grads["logits"], 0.0)


def test_distillation_beta_scales_kl(rng):
    new, old = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    v = np.zeros(4)
    one = objectives.distillation_loss(v, v, new, old, DistilConfig(beta=1.0))
    ten = objectives.distillation_loss(v, v, new, old, DistilConfig(beta=10.0))
    assert ten.loss == pytest.approx(10 * one.loss)
    assert one.stats["distil_kl"] == pytest.approx(nn_core.kl_categorical(old, new).mean())

import numpy as np
import pytest

from dna_rl.models import nn_core


@pytest.fixture
def spec():
    return nn_core.NetSpec(
        input_dim=3,
        hidden_widths=(5, 4),
        heads=(("logits", 3), ("value", 1)),
        activation="tanh",
        head_gains=(("logits", 0.01),),
    )


def test_param_count(spec):
    expected = (3 * 5 + 5) + (5 * 4 + 4) + (4 * 3 + 3) + (4 * 1 + 1)
    assert nn_core.param_count(spec) == expected
    params = nn_core.init_params(spec, np.random.default_rng(0))
    assert params.shape == (expected,)


def test_forward_shapes(spec, rng):
    params = nn_core.init_params(spec, rng)
    out = nn_core.forward(spec, params, rng.normal(size=(7, 3)))
    assert out["logits"].shape == (7, 3)
    assert out["value"].shape == (7, 1)


def test_forward_rejects_wrong_width(spec, rng):
    params = nn_core.init_params(spec, rng)
    with pytest.raises(ValueError):
        nn_core.forward(spec, params, rng.normal(size=(2, 4)))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(input_dim=0, hidden_widths=(4,), heads=(("v", 1),)),
        dict(input_dim=2, hidden_widths=(), heads=(("v", 1),)),
        dict(input_dim=2, hidden_widths=(4,), heads=()),
        dict(input_dim=2, hidden_widths=(4,), heads=(("v", 1), ("v", 2))),
        dict(input_dim=2, hidden_widths=(4,), heads=(("v", 1),), activation="gelu"),
    ],
)
def test_bad_specs(kwargs):
    with pytest.raises(ValueError):
        nn_core.NetSpec(**kwargs)


def test_small_head_gain_gives_small_logits(spec, rng):
    params = nn_core.init_params(spec, rng)
    out = nn_core.forward(spec, params, rng.normal(size=(64, 3)))
    assert np.abs(out["logits"]).max() < 0.2


def test_init_is_seeded(spec):
    a = nn_core.init_params(spec, np.random.default_rng(3))
    b = nn_core.init_params(spec, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_backward_matches_finite_differences(spec, rng):
    params = nn_core.init_params(spec, rng)
    obs = rng.normal(size=(6, 3))
    g_logits = rng.normal(size=(6, 3))
    g_value = rng.normal(size=(6, 1))

    def objective(p):
        out = nn_core.forward(spec, p, obs)
        return float((out["logits"] * g_logits).sum() + (out["value"] * g_value).sum())

    grads = nn_core.backward(spec, params, obs, {"logits": g_logits, "value": g_value})
    h = 1e-5
    numeric = np.zeros_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (objective(up) - objective(down)) / (2 * h)
    np.testing.assert_allclose(grads, numeric, rtol=1e-6, atol=1e-8)


def test_missing_head_contributes_nothing(spec, rng):
    params = nn_core.init_params(spec, rng)
    obs = rng.normal(size=(4, 3))
    grads = nn_core.backward(spec, params, obs, {"value": np.ones((4, 1))})
    # logits head block is the third of four layers
    start = (3 * 5 + 5) + (5 * 4 + 4)
    assert np.all(grads[start : start + 4 * 3 + 3] == 0.0)


def test_log_softmax_is_stable():
    logp = nn_core.log_softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(logp))
    assert logp[0] == pytest.approx(0.0)


def test_entropy_of_uniform():
    assert nn_core.entropy(np.zeros(4)) == pytest.approx(np.log(4))
    np.testing.assert_allclose(nn_core.entropy(np.zeros((3, 2))), np.log(2))


def test_kl_zero_for_same_and_positive_otherwise():
    a = np.array([[0.1, 0.5, -0.2]])
    assert nn_core.kl_categorical(a, a)[0] == pytest.approx(0.0, abs=1e-15)
    assert nn_core.kl_categorical(a, a + np.array([0.0, 1.0, 0.0]))[0] > 0.0
    with pytest.raises(ValueError):
        nn_core.kl_categorical(np.zeros(2), np.zeros(3))


def test_sample_action_frequencies(rng):
    logits = np.log(np.array([0.2, 0.3, 0.5]))
    actions, logp = nn_core.sample_action(np.tile(logits, (100_000, 1)), rng)
    freq = np.bincount(actions, minlength=3) / actions.size
    np.testing.assert_allclose(freq, [0.2, 0.3, 0.5], atol=0.01)
    np.testing.assert_allclose(logp, logits[actions])


def test_sample_single_row(rng):
    action, logp = nn_core.sample_action(np.array([0.0, -50.0]), rng)
    assert action == 0
    assert isinstance(logp, float)


def test_greedy_action():
    assert nn_core.greedy_action(np.array([0.1, 0.9, 0.3])) == 1
    np.testing.assert_array_equal(nn_core.greedy_action(np.eye(3)), [0, 1, 2])


def test_first_adam_step_moves_by_lr():
    block = nn_core.ParameterBlock(np.zeros(3))
    block.grads[:] = [2.0, -0.5, 0.0]
    nn_core.adam_step(block, lr=0.01)
    np.testing.assert_allclose(block.params, [-0.01, 0.01, 0.0], rtol=1e-6)
    assert block.step_count == 1


def test_zero_gradient_leaves_params():
    block = nn_core.ParameterBlock(np.arange(4.0))
    for _ in range(3):
        nn_core.adam_step(block, lr=0.1)
    np.testing.assert_array_equal(block.params, np.arange(4.0))


def test_clip_global_grad_norm():
    grads = np.array([6.0, 8.0])
    clipped = nn_core.clip_global_grad_norm(grads, 5.0)
    assert nn_core.global_norm(clipped) == pytest.approx(5.0)
    np.testing.assert_allclose(clipped, [3.0, 4.0])
    small = np.array([0.3, 0.4])
    np.testing.assert_array_equal(nn_core.clip_global_grad_norm(small, 5.0), small)


def test_sharing_block_aliases_params_with_own_moments():
    base = nn_core.ParameterBlock(np.ones(2))
    base.adam_m[:] = 1.0
    other = nn_core.ParameterBlock.sharing(base)
    assert other.params is base.params
    assert np.all(other.adam_m == 0.0)
    other.grads[:] = 1.0
    nn_core.adam_step(other, lr=0.5)
    np.testing.assert_allclose(base.params, [0.5, 0.5])


def test_block_shape_checked():
    with pytest.raises(ValueError):
        nn_core.ParameterBlock(np.zeros(3), grads=np.zeros(2))


def test_snapshot_is_frozen_and_restorable():
    block = nn_core.ParameterBlock(np.array([1.0, 2.0]))
    snap = nn_core.snapshot_params(block)
    with pytest.raises(ValueError):
        snap[0] = 5.0
    block.params[:] = 0.0
    nn_core.restore_params(block, snap)
    np.testing.assert_array_equal(block.params, [1.0, 2.0])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionflow.cfm import (ConstantField, DivergenceError, FlowBatch, FlowConfig, OracleField, cfm_loss,
                            export_sequence_csv, flow_input, make_vector_field, ot_path, read_sequence_csv,
                            sample, target_field)
from motionflow.netcore import Module, ShapeError, Tensor, check_gradients

SIGMA = 1e-4


def test_path_boundaries():
    x0, x1 = np.array([1.0, -2.0]), np.array([3.0, 5.0])
    np.testing.assert_array_equal(ot_path(x0, x1, 0.0, SIGMA), x0)
    np.testing.assert_array_equal(ot_path(x0, x1, 1.0, 0.0), x1)


def test_path_midpoint_from_zero():
    np.testing.assert_allclose(ot_path(np.zeros(2), np.array([2.0, 4.0]), 0.5, SIGMA), [1.0, 2.0])


def test_path_rejects_time_outside_unit_interval():
    with pytest.raises(ValueError):
        ot_path(np.zeros(2), np.zeros(2), 1.5)
    with pytest.raises(ValueError):
        ot_path(np.zeros(2), np.zeros(2), -0.1)


def test_target_field_cases():
    np.testing.assert_array_equal(target_field(np.zeros(2), np.array([1.0, 2.0]), SIGMA), [1.0, 2.0])
    x = np.array([0.3, -0.7])
    np.testing.assert_array_equal(target_field(x, x, 0.0), 0.0)
    np.testing.assert_allclose(target_field([1.0, 0.0], [0.0, 1.0], SIGMA), [-0.9999, 1.0], rtol=0, atol=1e-15)


@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_field_is_time_derivative_of_path(seed, t, sigma_frac):
    # finite difference of the path in t equals the (t-independent) target field
    rng = np.random.default_rng(seed)
    x0, x1 = rng.normal(size=(2, 3, 2))
    sigma = 1e-2 * sigma_frac
    h = 1e-5
    lo, hi = max(t - h, 0.0), min(t + h, 1.0)
    fd = (ot_path(x0, x1, hi, sigma) - ot_path(x0, x1, lo, sigma)) / (hi - lo)
    np.testing.assert_allclose(fd, target_field(x0, x1, sigma), atol=1e-8)


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(sigma_min=0.0)
    with pytest.raises(ValueError):
        FlowConfig(sigma_min=0.1)
    with pytest.raises(ValueError):
        FlowConfig(euler_steps=0)
    with pytest.raises(ValueError):
        FlowConfig(temperature=-1.0)


def make_batch(rng, B=3, T=5, c=2):
    return FlowBatch(rng.normal(size=(B, T, c)), rng.normal(size=(B, T, c)), rng.uniform(size=B),
                     rng.normal(size=(B, T, c)))


def test_flow_batch_validation(rng):
    b = make_batch(rng)
    with pytest.raises(ShapeError):
        FlowBatch(b.x0, b.x1[:, :4], b.t, b.mu)
    with pytest.raises(ValueError):
        FlowBatch(b.x0, b.x1, b.t + 2.0, b.mu)


def test_flow_input_layout(rng):
    x, mu = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 3))
    inp = flow_input(x, np.array([0.25, 0.5]), mu).data
    assert inp.shape == (2, 4, 7)
    np.testing.assert_array_equal(inp[..., :3], x)
    np.testing.assert_array_equal(inp[0, :, 3], 0.25)
    np.testing.assert_array_equal(inp[1, :, 3], 0.5)
    np.testing.assert_array_equal(inp[..., 4:], mu)


def test_oracle_field_loss_is_zero(rng):
    b = make_batch(rng)
    u = target_field(b.x0, b.x1, SIGMA)
    assert cfm_loss(ConstantField(u), b, FlowConfig()).item() == 0.0


@pytest.mark.parametrize("eps", [0.1, -0.5, 2.0])
def test_constant_offset_loss_is_eps_squared(rng, eps):
    b = make_batch(rng)
    u = target_field(b.x0, b.x1, SIGMA)
    assert abs(cfm_loss(ConstantField(u, offset=eps), b, FlowConfig()).item() - eps ** 2) < 1e-12


def test_loss_shape_mismatch(rng):
    b = make_batch(rng)
    with pytest.raises(ShapeError):
        cfm_loss(ConstantField(np.zeros(3)), b, FlowConfig())


def test_cfm_loss_gradient_matches_finite_differences(rng):
    net = make_vector_field(2, 6, rng)
    b = make_batch(rng)
    err = check_gradients(net.parameters(), lambda: cfm_loss(net, b, FlowConfig()))
    assert err < 1e-4


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_cfm_loss_nonnegative_and_zero_only_at_target(seed):
    rng = np.random.default_rng(seed)
    b = make_batch(rng)
    u = target_field(b.x0, b.x1, SIGMA)
    perturbed = u + rng.normal(scale=1e-3, size=u.shape)
    assert cfm_loss(ConstantField(perturbed), b, FlowConfig()).item() > 0.0
    assert cfm_loss(ConstantField(u), b, FlowConfig()).item() == 0.0


def test_single_step_oracle_from_mean_hits_target(rng):
    x1 = rng.normal(size=(6, 3))
    out = sample(OracleField(x1, SIGMA), np.zeros((6, 3)), FlowConfig(SIGMA, 1, 0.0), rng)
    np.testing.assert_array_equal(out, x1)


@pytest.mark.parametrize("steps", [1, 2, 10])
def test_euler_endpoint_independent_of_steps(steps):
    rng = np.random.default_rng(5)
    x1 = rng.normal(size=(6, 3))
    mu = rng.normal(size=(6, 3))
    cfg = FlowConfig(SIGMA, steps, 1.0)
    x0 = mu + np.random.default_rng(9).standard_normal(mu.shape)
    out = sample(OracleField(x1, SIGMA), mu, cfg, np.random.default_rng(9))
    assert np.max(np.abs(out - (x1 + SIGMA * x0))) < 1e-12


def test_zero_field_cold_sampling_returns_mean(rng):
    mu = rng.normal(size=(4, 2))
    out = sample(ConstantField(np.zeros(2)), mu, FlowConfig(temperature=0.0), rng)
    np.testing.assert_array_equal(out, mu)


def test_sampling_deterministic_per_seed(rng):
    net = make_vector_field(2, 8, rng)
    mu = rng.normal(size=(5, 2))
    a = sample(net, mu, FlowConfig(), np.random.default_rng(3))
    b = sample(net, mu, FlowConfig(), np.random.default_rng(3))
    assert a.tobytes() == b.tobytes()


class ExplodingField(Module):
    in_features, out_features = 5, 2

    def forward(self, x):
        return Tensor(np.full(x.shape[:-1] + (2,), np.inf), check=False)


def test_divergence_flagged(rng):
    with pytest.raises(DivergenceError, match="step 0"):
        sample(ExplodingField(), np.zeros((3, 2)), FlowConfig(), rng)


def test_sequence_csv(tmp_path, rng):
    seq = rng.normal(size=(4, 3))
    export_sequence_csv(seq, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "frame,c0,c1,c2"
    np.testing.assert_array_equal(read_sequence_csv(tmp_path / "s.csv"), seq)

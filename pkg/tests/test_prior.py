import numpy as np
import pytest
from conftest import zero_parameters
from hypothesis import given, settings
from hypothesis import strategies as st

from motionflow.netcore import ShapeError, check_gradients
from motionflow.normaliser import prior_nll
from motionflow.prior import PriorInput, PriorNet, prior_forward, prior_summed_input


@pytest.fixture
def net(rng):
    return PriorNet(3, 8, rng)


def test_zero_network_emits_final_bias(net, rng):
    zero_parameters(net)
    net.head.bias.data[...] = [1.0, 2.0, 3.0]
    mu = prior_forward(net, PriorInput(rng.normal(size=3), rng.normal(size=(10, 3)))).data
    np.testing.assert_array_equal(mu, np.tile([1.0, 2.0, 3.0], (10, 1)))


def test_four_blocks(net):
    assert len(net.blocks) == 4


def test_summed_input(rng):
    first, content = rng.normal(size=3), rng.normal(size=(5, 3))
    np.testing.assert_array_equal(prior_summed_input(PriorInput(first, content)).data, content + first)
    firsts, contents = rng.normal(size=(2, 3)), rng.normal(size=(2, 5, 3))
    np.testing.assert_array_equal(prior_summed_input(PriorInput(firsts, contents)).data,
                                  contents + firsts[:, None, :])


def test_zero_content_depends_only_on_first_motion(net, rng):
    first = rng.normal(size=3)
    a = prior_forward(net, PriorInput(first, np.zeros((6, 3)))).data
    b = prior_forward(net, PriorInput(first.copy(), np.zeros((6, 3)))).data
    assert a.tobytes() == b.tobytes()
    c = prior_forward(net, PriorInput(first + 1.0, np.zeros((6, 3)))).data
    assert not np.allclose(a, c)


def test_dimension_mismatch(net, rng):
    with pytest.raises(ShapeError):
        prior_forward(net, PriorInput(np.zeros(2), np.zeros((5, 3))))
    with pytest.raises(ShapeError):
        prior_forward(net, PriorInput(np.zeros(4), np.zeros((5, 4))))


@given(st.integers(1, 512))
@settings(max_examples=15, deadline=None)
def test_output_length_matches_content(T):
    net = PriorNet(2, 4, np.random.default_rng(0))
    mu = prior_forward(net, PriorInput(np.ones(2), np.zeros((T, 2))))
    assert mu.shape == (T, 2)


def test_no_state_between_calls(net, rng):
    inp = PriorInput(rng.normal(size=3), rng.normal(size=(7, 3)))
    first = prior_forward(net, inp).data
    prior_forward(net, PriorInput(rng.normal(size=3), rng.normal(size=(9, 3))))
    assert prior_forward(net, inp).data.tobytes() == first.tobytes()


@pytest.mark.parametrize("seed", range(3))
def test_full_stack_gradient_check(seed):
    rng = np.random.default_rng(seed)
    net = PriorNet(2, 4, rng)
    f_c = rng.normal(size=(6, 2))
    inp = PriorInput(rng.normal(size=2), rng.normal(size=(6, 2)))
    err = check_gradients(net.parameters(), lambda: prior_nll(f_c, prior_forward(net, inp)))
    assert err < 1e-4

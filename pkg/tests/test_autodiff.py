import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from otcycle import autodiff as ad
from otcycle import nn

from helpers import central_diff, min_preactivation_gap, net_arrays, rel_err, straight_line_mlp

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_add_evaluates_componentwise():
    out = ad.primitive("add", [ad.const([1.0, 2.0]), ad.const([3.0, 4.0])])
    assert np.array_equal(ad.eval(out), [4.0, 6.0])


def test_matmul_shape_rule():
    assert ad.matmul(ad.zeros((2, 3)), ad.zeros((3, 1))).shape == (2, 1)


def test_l2_norm_rows_on_345_and_zero_row():
    assert np.array_equal(ad.eval(ad.l2_norm_rows(ad.const([[3.0, 4.0], [0.0, 0.0]]))), [5.0, 0.0])


@pytest.mark.parametrize("kind,operands", [
    ("add", [(2, 3), (3, 2)]),
    ("matmul", [(2, 3), (2, 3)]),
    ("concat_last_axis", [(2, 3), (4, 1)]),
])
def test_shape_mismatch_names_kind_and_shapes(kind, operands):
    with pytest.raises(ad.GraphError, match=kind):
        ad.primitive(kind, [ad.zeros(s) for s in operands])


def test_unknown_primitive():
    with pytest.raises(ad.GraphError, match="unknown primitive"):
        ad.primitive("conv2d", [ad.zeros(2)])


def test_nodes_are_immutable():
    n = ad.const(1.0)
    with pytest.raises(AttributeError):
        n.op = "add"


def test_square_and_tanh_values():
    x = ad.param("x", ())
    assert ad.eval(ad.square(x), {"x": np.array(3.0)}) == 9.0
    assert ad.eval(ad.tanh(x), {"x": np.array(0.0)}) == 0.0


def test_unbound_slot_is_named():
    with pytest.raises(ad.GraphError, match="'w'"):
        ad.eval(ad.square(ad.param("w", (2,))), {})


def test_non_finite_intermediate_is_reported():
    x = ad.param("x", (1,))
    with pytest.raises(ad.GraphError, match="non-finite"):
        ad.eval(ad.div(ad.const([1.0]), x), {"x": np.array([0.0])})
    with pytest.raises(ad.GraphError, match="non-finite"):
        ad.eval(ad.square(x), {"x": np.array([np.inf])})


def test_first_and_second_derivatives_of_powers():
    x = ad.param("x", ())
    (g,) = ad.grad(ad.square(x), [x])
    assert ad.eval(g, {"x": np.array(3.0)}) == 6.0
    cube = ad.mul(ad.square(x), x)
    (g1,) = ad.grad(cube, [x])
    (g2,) = ad.grad(g1, [x])
    assert ad.eval(g2, {"x": np.array(2.0)}) == 12.0


def test_grad_requires_scalar_root():
    x = ad.param("x", (3,))
    with pytest.raises(ad.GraphError, match="scalar"):
        ad.grad(ad.square(x), [x])


def test_grad_of_unused_input_is_zero():
    x, y = ad.param("x", (2,)), ad.param("y", (3,))
    _, gy = ad.grad(ad.sum(ad.square(x)), [x, y])
    assert np.array_equal(ad.eval(gy), np.zeros(3))


def test_leaky_relu_right_derivative_at_zero_and_zero_curvature():
    x = ad.param("x", ())
    (g,) = ad.grad(ad.leaky_relu(x), [x])
    assert ad.eval(g, {"x": np.array(0.0)}) == 1.0
    assert ad.eval(g, {"x": np.array(-1.0)}) == pytest.approx(0.2)
    (g2,) = ad.grad(g, [x])
    for v in (-1.0, 0.0, 2.0):
        assert ad.eval(g2, {"x": np.array(v)}) == 0.0


def test_mlp_forward_matches_straight_line_oracle_bit_exactly(rng):
    G = nn.init_generator(2, 2, seed=3, hidden=16)
    x, z = rng.standard_normal((7, 2)), rng.uniform(-1, 1, (7, 2))
    W, b = net_arrays(G)
    assert np.array_equal(nn.generator_forward(G, x, z), straight_line_mlp(W, b, np.concatenate([x, z], 1)))


def test_evaluation_is_repeatable_bit_for_bit(rng):
    D = nn.init_critic(3, seed=1, hidden=8)
    y = rng.standard_normal((5, 3))
    assert np.array_equal(nn.critic_forward(D, y), nn.critic_forward(D, y))


def _mlp_loss_graph(rng, widths):
    params, nodes = {}, {}
    h = ad.const(rng.standard_normal((4, widths[0])))
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        W, bias = ad.param(f"W{i}", (b, a)), ad.param(f"b{i}", (b,))
        nodes[f"W{i}"], nodes[f"b{i}"] = W, bias
        params[f"W{i}"] = rng.standard_normal((b, a)) / np.sqrt(a)
        params[f"b{i}"] = 0.1 * rng.standard_normal(b)
        h = ad.add(ad.matmul(h, ad.transpose(W)), bias)
        if i < len(widths) - 2:
            h = ad.tanh(h) if i % 2 else ad.leaky_relu(h)
    return ad.sum(ad.square(h)), nodes, params


def test_mlp_gradient_matches_finite_differences(rng):
    root, nodes, params = _mlp_loss_graph(rng, [3, 5, 4, 2])
    grads = ad.grad(root, list(nodes.values()))
    got = dict(zip(nodes, ad.evaluate_many(grads, params)))
    fd = central_diff(lambda p: float(ad.eval(root, p)), {k: v.copy() for k, v in params.items()})
    assert rel_err(got, fd) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(
    a=hnp.arrays(np.float64, (3, 2), elements=finite),
    b=hnp.arrays(np.float64, (3, 2), elements=finite),
    ca=st.floats(-3, 3), cb=st.floats(-3, 3),
)
def test_grad_is_linear(a, b, ca, cb):
    x = ad.param("x", (3, 2))
    f = ad.sum(ad.mul(ad.tanh(x), ad.const(a)))
    g = ad.sum(ad.mul(ad.square(x), ad.const(b)))
    bind = {"x": np.linspace(-1, 1, 6).reshape(3, 2)}
    (combo,) = ad.grad(ad.add(ad.scale(f, ca), ad.scale(g, cb)), [x])
    (gf,) = ad.grad(f, [x])
    (gg,) = ad.grad(g, [x])
    np.testing.assert_allclose(ad.eval(combo, bind), ca * ad.eval(gf, bind) + cb * ad.eval(gg, bind),
                               rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 3), elements=finite))
def test_evaluation_is_referentially_transparent(v):
    x = ad.param("x", (4, 3))
    root = ad.mean(ad.l2_norm_rows(ad.leaky_relu(x)))
    assert ad.eval(root, {"x": v}).tobytes() == ad.eval(root, {"x": v.copy()}).tobytes()


def test_program_rerun_matches_fresh_graph(rng):
    D = nn.init_critic(2, seed=0, hidden=8)
    y = ad.param("y", (6, 2))
    prog = ad.Program([nn.critic_graph(D, "D", y)])
    for _ in range(3):
        v = rng.standard_normal((6, 2))
        (out,) = prog.run({**nn.bindings(D, "D"), "y": v})
        assert np.array_equal(out, nn.critic_forward(D, v))


def test_second_order_penalty_gradient_matches_finite_differences(rng):
    D = nn.init_critic(2, seed=5, hidden=6)
    D.layers = D.layers[:1] + D.layers[2:3]
    D.layers[1] = nn.LinearLayer(rng.standard_normal((1, 6)), np.zeros(1))
    y = ad.const(rng.standard_normal((4, 2)))
    nodes = nn.param_nodes(D, "D")
    (gy,) = ad.grad(ad.sum(nn.critic_graph(D, "D", y, nodes)), [y])
    f = ad.sum(ad.square(ad.l2_norm_rows(gy)))
    keys = list(nodes)
    got = dict(zip(keys, ad.evaluate_many(ad.grad(f, [nodes[k] for k in keys]), nn.bindings(D, "D"))))
    params = {k: v.copy() for k, v in nn.bindings(D, "D").items()}
    W, b = [l.weight for l in D.layers], [l.bias for l in D.layers]
    assume_gap = min_preactivation_gap(W, b, ad.eval(y))
    assert assume_gap > 1e-4
    fd = central_diff(lambda p: float(ad.eval(f, p)), params)
    assert rel_err(got, fd) <= 1e-5

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rmcosgan.autodiff import DomainError, ShapeError, Tensor, backward, finite_difference_gradient, max_relative_error
from rmcosgan.gradcheck import check_loss_endpoint
from rmcosgan.layers import (BatchNormLayer, CriticHead, DenseLayer, SpectralNormWrapper, batchnorm_forward,
                             build_network, critic_logit, dense_forward, load_checkpoint, save_checkpoint,
                             spectral_normalize)
from rmcosgan.losses import LossKind


def top_singular(w):
    return float(np.sqrt(np.linalg.eigvalsh(w.T @ w).max()))


def test_dense_identity_and_sum():
    x = Tensor(np.array([[1.5, -2.0], [0.25, 4.0]]))
    ident = DenseLayer(Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(dense_forward(ident, x).data, x.data)
    summer = DenseLayer(Tensor([[1.0, 1.0]]), Tensor([0.0]))
    assert dense_forward(summer, Tensor([[2.0, 3.0]])).data.tolist() == [[5.0]]


def test_dense_shape_error():
    layer = DenseLayer(Tensor(np.ones((3, 2))), Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        dense_forward(layer, Tensor(np.ones((4, 3))))


@pytest.mark.parametrize("activation", ["linear", "relu", "leaky_relu", "tanh", "sigmoid"])
def test_dense_gradient(activation):
    rng = np.random.default_rng(1)
    layer = DenseLayer(Tensor(rng.normal(size=(4, 3)), requires_grad=True),
                       Tensor(rng.normal(size=4), requires_grad=True), activation)
    x = Tensor(rng.normal(size=(5, 3)))
    w = Tensor(rng.normal(size=(5, 4)))
    f = lambda _: (dense_forward(layer, x) * w).sum()
    backward(f(None))
    for p in layer.parameters():
        assert max_relative_error(p.grad, finite_difference_gradient(f, p)) <= 1e-4


def test_batchnorm_standardizes_two_points():
    bn = BatchNormLayer.create(1)
    out = batchnorm_forward(bn, Tensor([[1.0], [3.0]])).data
    np.testing.assert_allclose(out, [[-1.0], [1.0]], atol=1e-7)


def test_batchnorm_eval_identity():
    bn = BatchNormLayer.create(3)
    bn.training = False
    bn.gamma.data[:] = [2.0, 1.0, 0.5]
    bn.beta.data[:] = [0.0, 1.0, -1.0]
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_allclose(batchnorm_forward(bn, Tensor(x)).data, x * bn.gamma.data + bn.beta.data, rtol=1e-7)


def test_batchnorm_train_statistics():
    rng = np.random.default_rng(2)
    bn = BatchNormLayer.create(5)
    bn.gamma.data[:] = rng.uniform(0.5, 2.0, 5)
    bn.beta.data[:] = rng.normal(size=5)
    out = batchnorm_forward(bn, Tensor(rng.normal(3.0, 2.0, size=(64, 5)))).data
    np.testing.assert_allclose(out.mean(axis=0), bn.beta.data, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=0), bn.gamma.data ** 2, atol=1e-6)


def test_batchnorm_running_stats_and_single_sample():
    bn = BatchNormLayer.create(1, momentum=0.5)
    batchnorm_forward(bn, Tensor([[1.0], [3.0]]))
    np.testing.assert_allclose(bn.running_mean, [1.0])
    np.testing.assert_allclose(bn.running_var, [0.5 * 1.0 + 0.5 * 2.0])
    with pytest.raises(ValueError):
        batchnorm_forward(bn, Tensor([[1.0]]))


def test_spectral_norm_diagonal():
    w = SpectralNormWrapper(Tensor(np.diag([3.0, 1.0])))
    w.power_iterate(5)
    eff = w.effective().data
    np.testing.assert_allclose(eff, np.diag([1.0, 1.0 / 3.0]), atol=1e-2)
    assert abs(top_singular(eff) - 1.0) <= 1e-2


def test_spectral_norm_unit_matrix_unchanged():
    q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(4, 4)))
    w = SpectralNormWrapper(Tensor(q))
    eff = spectral_normalize(w).data
    np.testing.assert_allclose(eff, q, atol=1e-2)


def test_spectral_norm_random_16x16():
    rng = np.random.default_rng(4)
    for _ in range(20):
        w = SpectralNormWrapper(Tensor(rng.normal(size=(16, 16))), rng=rng)
        w.power_iterate(200)
        assert abs(top_singular(w.effective().data) - 1.0) <= 1e-2
        assert abs(np.linalg.norm(w.u) - 1.0) <= 1e-12


def test_spectral_norm_persists_u_and_rejects_zero():
    w = SpectralNormWrapper(Tensor(np.diag([3.0, 1.0])))
    spectral_normalize(w)
    u1 = w.u.copy()
    spectral_normalize(w)
    assert not np.array_equal(u1, w.u) or np.allclose(abs(u1), [1, 0])
    with pytest.raises(DomainError):
        SpectralNormWrapper(Tensor(np.zeros((2, 2)))).power_iterate()


def test_cosine_head_values():
    head = CriticHead("cosine", Tensor([[2.0, 0.0]]))
    out = critic_logit(head, Tensor([[5.0, 0.0], [0.0, 3.0]])).data
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-15)
    linear = CriticHead("linear", Tensor([[1.0, -1.0]]))
    assert critic_logit(linear, Tensor([[3.0, 1.0]])).data.tolist() == [2.0]


def test_cosine_head_zero_feature_rejected():
    with pytest.raises(DomainError):
        critic_logit(CriticHead("cosine", Tensor([[1.0, 0.0]])), Tensor([[0.0, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)), arrays(np.float64, (1, 3), elements=st.floats(-10, 10)))
def test_cosine_head_range_and_scale_invariance(v, w):
    if np.any(np.linalg.norm(v, axis=1) < 1e-6) or np.linalg.norm(w) < 1e-6:
        return
    head = CriticHead("cosine", Tensor(w))
    base = critic_logit(head, Tensor(v)).data
    assert np.all(np.abs(base) <= 1.0 + 1e-12)
    for c in (0.1, 10.0):
        assert np.max(np.abs(critic_logit(head, Tensor(c * v)).data - base)) <= 1e-12
        scaled = CriticHead("cosine", Tensor(c * w))
        assert np.max(np.abs(critic_logit(scaled, Tensor(v)).data - base)) <= 1e-12


def test_generator_parameter_count():
    assert build_network([2, 64, 64, 2], "generator").n_parameters() == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2


def test_discriminator_spectral_warmup():
    D = build_network([2, 32, 32, 1], "discriminator", head="linear", spectral=True,
                      rng=np.random.default_rng(5), init_std=0.5)
    wrappers = D.spectral_wrappers()
    assert len(wrappers) == 3
    for w in wrappers:
        assert abs(top_singular(w.effective().data) - 1.0) <= 1e-2


def test_cosine_discriminator_head_has_no_spectral_wrapper():
    D = build_network([2, 8, 1], "discriminator", head="cosine", spectral=True)
    assert D.head.variant == "cosine" and D.head.spectral is None
    out = D(Tensor(np.random.default_rng(0).normal(size=(6, 2))))
    assert out.shape == (6,) and np.all(np.abs(out.data) <= 1.0)


def test_build_is_deterministic():
    a = build_network([4, 8, 2], "generator", batchnorm=True, rng=np.random.default_rng(9))
    b = build_network([4, 8, 2], "generator", batchnorm=True, rng=np.random.default_rng(9))
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))


@pytest.mark.parametrize("sizes,role", [([], "generator"), ([3], "generator"), ([2, 0, 1], "generator"),
                                        ([2, 4, 2], "discriminator"), ([2, 4], "critic")])
def test_build_rejects_bad_specs(sizes, role):
    with pytest.raises(ValueError):
        build_network(sizes, role)


def test_generator_output_activation():
    G = build_network([4, 8, 3], "generator", output_activation="tanh", rng=np.random.default_rng(0), init_std=5.0)
    out = G(Tensor(np.random.default_rng(1).normal(size=(10, 4)) * 10)).data
    assert np.all(np.abs(out) <= 1.0)


def test_rmcos_discriminator_gradient_on_2_16_16_1():
    rng = np.random.default_rng(12)
    case = check_loss_endpoint(LossKind.RMCOS, "D", rng, batch=8, n_coords=200)
    assert case.rel_error <= 1e-4


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(7)
    G = build_network([4, 16, 2], "generator", batchnorm=True, rng=rng)
    D = build_network([2, 16, 1], "discriminator", head="linear", spectral=True, rng=rng)
    G(Tensor(rng.normal(size=(8, 4))))  # moves running stats off their initial values
    path = save_checkpoint(tmp_path / "ck.npz", {"generator": G, "discriminator": D}, {"step": 3})
    nets, meta, extra = load_checkpoint(path)
    assert meta == {"step": 3} and extra == {}
    for name, net in (("generator", G), ("discriminator", D)):
        for a, b in zip(net.parameters(), nets[name].parameters()):
            assert a.data.tobytes() == b.data.tobytes()
    x = Tensor(rng.normal(size=(5, 4)))
    G.eval(), nets["generator"].eval()
    assert G(x).data.tobytes() == nets["generator"](x).data.tobytes()
    y = Tensor(rng.normal(size=(5, 2)))
    assert D(y).data.tobytes() == nets["discriminator"](y).data.tobytes()


def test_checkpoint_rejects_foreign_npz(tmp_path):
    path = tmp_path / "other.npz"
    meta = np.frombuffer(b'{"format": "something-else"}', dtype=np.uint8)
    np.savez(path, a=np.zeros(2), __meta__=meta)
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(path)

import numpy as np
import pytest

from npforge import autodiff as ad
from npforge.batching import collate, from_arrays
from npforge.convdeepset import make_discretization
from npforge.models import (
    RECEPTIVE_FIELDS,
    CnnSpec,
    ConvCNP,
    ConvNP,
    GridGaussian,
    NeuralProcess,
    PredictiveSamples,
    build_model,
    convcnp_forward,
    convnp_encode,
    convnp_sample,
    np_forward,
)
from npforge.synthproc import ProcessSpec, sample_tasks, train_protocol

SMALL = CnnSpec(layers=2, channels=8, kernel_width=5)


def _task(seed=0, n=6):
    rng = np.random.default_rng(seed)
    xc = rng.uniform(-1, 1, n)
    return xc, np.sin(3 * xc), np.linspace(-1, 1, 7)


def test_kernel_width_from_receptive_field():
    spec = CnnSpec.for_process("matern52")
    assert spec.kernel_width % 2 == 1
    assert spec.receptive_field() >= RECEPTIVE_FIELDS["matern52"]
    smaller = CnnSpec(spec.layers, spec.channels, spec.kernel_width - 2)
    assert smaller.receptive_field() < RECEPTIVE_FIELDS["matern52"]
    assert CnnSpec.for_process("sawtooth").receptive_field() >= 16


def test_parameter_counts():
    cnn = CnnSpec.for_process("matern52")
    assert ConvCNP(cnn).parameter_count() == 51526
    assert ConvNP(cnn).parameter_count() == 105894
    assert NeuralProcess().parameter_count() == 132866


def test_initial_cnn_keeps_input_signal_through_depth():
    # without residuals, a shrinking init would leave the output bias-only
    model = build_model("convcnp", seed=0)
    x = np.random.default_rng(1).normal(size=(2, 300, 2))
    with ad.no_grad():
        h = model.cnn(ad.Value(x)).data
        first = ad.linear(ad.Value(x), model.params["cnn.in.w"], model.params["cnn.in.b"]).data
    ratio = h.std(axis=1).mean() / first.std(axis=1).mean()
    assert 0.1 < ratio < 10.0


def test_build_model_rejects_unknown():
    with pytest.raises(ValueError):
        build_model("anp")


def test_convcnp_shapes_and_positive_sigma():
    m = ConvCNP(SMALL, density=16)
    mu, sigma = convcnp_forward(m, *_task())
    assert mu.shape == sigma.shape == (7,)
    assert np.all(sigma > 0) and np.all(np.isfinite(mu))


def test_convcnp_empty_context_is_deterministic():
    m = ConvCNP(SMALL, density=16)
    xt = np.linspace(-1, 1, 5)
    a = convcnp_forward(m, [], [], xt)
    b = convcnp_forward(m, [], [], xt)
    np.testing.assert_array_equal(a[0], b[0])
    assert np.all(np.isfinite(a[0]))


def test_convcnp_duplicate_point_is_invisible():
    m = ConvCNP(SMALL, density=16)
    xt = np.linspace(-1, 1, 5)
    a = convcnp_forward(m, [0.2], [1.0], xt)
    b = convcnp_forward(m, [0.2, 0.2], [1.0, 1.0], xt)
    assert np.all(np.isfinite(b[0])) and np.all(b[1] > 0)
    # the density channel doubles, so the prediction is allowed to move
    assert a[0].shape == b[0].shape


def test_models_are_permutation_invariant():
    xc, yc, xt = _task(1)
    perm = np.random.default_rng(2).permutation(xc.size)
    m = ConvCNP(SMALL, density=16)
    np.testing.assert_array_equal(convcnp_forward(m, xc, yc, xt)[0], convcnp_forward(m, xc[perm], yc[perm], xt)[0])
    n = NeuralProcess(width=16, latent_dim=4)
    a = np_forward(n, xc, yc, xt, 3, np.random.default_rng(0))
    b = np_forward(n, xc[perm], yc[perm], xt, 3, np.random.default_rng(0))
    np.testing.assert_array_equal(a.mu, b.mu)
    c = ConvNP(SMALL, density=16, latent_channels=3)
    d = make_discretization(np.concatenate([xc, xt]), 16)
    g1, g2 = convnp_encode(c, xc, yc, d), convnp_encode(c, xc[perm], yc[perm], d)
    np.testing.assert_array_equal(g1.mu, g2.mu)
    np.testing.assert_array_equal(g1.sigma, g2.sigma)


def test_convnp_sigma_z_positive_on_empty_context():
    c = ConvNP(SMALL, density=16, latent_channels=3)
    d = make_discretization([-1.0, 1.0], 16)
    g = convnp_encode(c, [], [], d)
    assert g.mu.shape == (d.count, 3)
    assert np.all(g.sigma > 0)


def test_convnp_collapsed_latent_gives_identical_samples():
    c = ConvNP(SMALL, density=16, latent_channels=3)
    xc, yc, xt = _task(3)
    d = make_discretization(np.concatenate([xc, xt]), 16)
    g = convnp_encode(c, xc, yc, d)
    collapsed = GridGaussian(d, g.mu, np.zeros_like(g.sigma))
    s = convnp_sample(c, collapsed, xt, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(s.mu, np.tile(s.mu[0], (4, 1)))


def test_convnp_sampling_is_seed_deterministic():
    c = ConvNP(SMALL, density=16, latent_channels=3)
    xc, yc, xt = _task(4)
    d = make_discretization(np.concatenate([xc, xt]), 16)
    g = convnp_encode(c, xc, yc, d)
    a = convnp_sample(c, g, xt, 1, np.random.default_rng(9))
    b = convnp_sample(c, g, xt, 1, np.random.default_rng(9))
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.sigma, b.sigma)
    with pytest.raises(ValueError):
        convnp_sample(c, g, xt, 0, np.random.default_rng(0))


def test_np_empty_context_and_collapse():
    n = NeuralProcess(width=16, latent_dim=4)
    out = np_forward(n, [], [], np.linspace(-1, 1, 4), 2, np.random.default_rng(0))
    assert np.all(np.isfinite(out.mu)) and np.all(out.sigma > 0)
    b = from_arrays([0.1], [0.3], [0.0, 0.5])
    with ad.no_grad():
        mu_z, _ = n.encode(b.xc, b.yc, b.mc)
        z = np.broadcast_to(mu_z.data[:, None, :], (1, 3, 4))
        mu, _ = n.decode(ad.Value(z), b.xt)
    np.testing.assert_allclose(mu.data[0, 0], mu.data[0, 2], rtol=0, atol=1e-15)


def test_mixture_moments_law_of_total_variance():
    mu = np.array([[0.0, 1.0], [2.0, 1.0]])
    sig = np.array([[1.0, 0.5], [1.0, 0.5]])
    m, s = PredictiveSamples(mu, sig).mixture_moments()
    np.testing.assert_allclose(m, [1.0, 1.0])
    np.testing.assert_allclose(s, [np.sqrt(1.0 + 1.0), 0.5])


def test_linear_decoder_pushforward_covariance():
    # a linear map of a diagonal Gaussian has covariance A diag(s^2) A^T
    rng = np.random.default_rng(5)
    mu_z, s_z = rng.normal(size=5), rng.uniform(0.2, 1.0, 5)
    A = rng.normal(size=(3, 5))
    from npforge.models import draw_noise, sample_latents

    eps = draw_noise(rng, 1, 200_000, (5,))
    z = sample_latents(ad.Value(mu_z[None]), ad.Value(s_z[None]), eps).data[0]
    f = z @ A.T
    C = np.cov(f.T)
    ref = A @ np.diag(s_z ** 2) @ A.T
    assert np.allclose(C, ref, atol=0.03 * np.abs(ref).max())


def test_hom_noise_is_constant_over_targets():
    c = ConvNP(SMALL, density=16, latent_channels=3, noise="hom")
    xc, yc, xt = _task(6)
    d = make_discretization(np.concatenate([xc, xt]), 16)
    s = convnp_sample(c, convnp_encode(c, xc, yc, d), xt, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(s.sigma, np.broadcast_to(s.sigma[:, :1], s.sigma.shape))
    with pytest.raises(ValueError):
        ConvNP(SMALL, noise="student")


def test_noise_fixed_clamps_sigma():
    c = ConvNP(SMALL, density=16, latent_channels=3)
    c.noise_fixed = 1e-2
    xc, yc, xt = _task(7)
    d = make_discretization(np.concatenate([xc, xt]), 16)
    s = convnp_sample(c, convnp_encode(c, xc, yc, d), xt, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(s.sigma, 1e-2)


def test_batch_predictions_match_single_task_with_shared_grid():
    m = ConvCNP(SMALL, density=16)
    tasks = sample_tasks(train_protocol(), ProcessSpec.from_tag("eq"), 3, 0)
    batch = collate(tasks)
    d = m.discretize(batch)
    with ad.no_grad():
        mu, _ = m.predict(batch, d)
        single, _ = m.predict(collate(tasks[1:2]), d)
    np.testing.assert_allclose(mu.data[1, : tasks[1].n_target], single.data[0], atol=1e-12)

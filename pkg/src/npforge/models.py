"""ConvCNP, ConvNP and the vanilla NP baseline.

All three share the same batch-level interface used by the objectives and the
trainer. Latent-variable models (ConvNP, NP) expose ``encode`` (context to a
diagonal Gaussian over the latent) and ``decode`` (latent samples to
per-target Gaussians); the ConvCNP exposes ``predict``.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .batching import Batch, from_arrays  # noqa: F401 - Batch re-exported
from .convdeepset import DENSITY, MARGIN, LengthscaleSet, canonical_order, embed, make_discretization, smooth

LEAK = 0.1
LATENT_CHANNELS = 16
NP_WIDTH = 128

#: receptive field (input units) per process
RECEPTIVE_FIELDS = {"eq": 2.0, "matern52": 2.0, "noisy_mixture": 4.0, "weakly_periodic": 4.0, "sawtooth": 16.0}


@dataclass(frozen=True)
class CnnSpec:
    layers: int = 10
    channels: int = 64
    kernel_width: int = 15
    slope: float = LEAK
    separable: bool = True

    @classmethod
    def for_receptive_field(cls, rf, density=DENSITY, layers=10, channels=64, separable=True):
        spacing = 1.0 / density
        w = math.ceil((rf / spacing - 1.0) / layers - 1e-9) + 1
        if w % 2 == 0:
            w += 1
        return cls(layers, channels, max(w, 1), LEAK, separable)

    @classmethod
    def for_process(cls, tag, density=DENSITY, **kw):
        return cls.for_receptive_field(RECEPTIVE_FIELDS[tag], density, **kw)

    def receptive_field(self, density=DENSITY):
        spacing = 1.0 / density
        return self.layers * (self.kernel_width - 1) * spacing + spacing


@dataclass
class GridGaussian:
    disc: object
    mu: np.ndarray  # (K, Z)
    sigma: np.ndarray


@dataclass
class PredictiveSamples:
    mu: np.ndarray  # (L, M)
    sigma: np.ndarray
    noise: str = "het"

    def mixture_moments(self):
        """Mean and std of the equally weighted Gaussian mixture at each target."""
        m = self.mu.mean(axis=0)
        second = (self.sigma ** 2 + self.mu ** 2).mean(axis=0)
        return m, np.sqrt(np.maximum(second - m * m, 0.0))


def _uniform(rng, shape, fan_in, name):
    bound = 1.0 / math.sqrt(fan_in)
    return ad.Value(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _dense(params, rng, cin, cout, name):
    params[name + ".w"] = _uniform(rng, (cin, cout), cin, name + ".w")
    params[name + ".b"] = _uniform(rng, (cout,), cin, name + ".b")


def _he(rng, shape, fan_in, gain2, name):
    """Zero-mean uniform weights with variance ``gain2 / fan_in``."""
    bound = math.sqrt(3.0 * gain2 / fan_in)
    return ad.Value(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _zeros(shape, name):
    return ad.Value(np.zeros(shape), requires_grad=True, name=name)


def _apply_dense(params, name, x):
    return ad.linear(x, params[name + ".w"], params[name + ".b"])


class CNN:
    """Pointwise in-projection, ``layers`` conv blocks with leaky ReLU, no out-projection.

    Conv blocks use variance-preserving (He) initialisation with zero biases:
    without residual paths, the default 1/sqrt(fan_in) scale shrinks the
    signal several-fold per block and a 10-block stack forgets its input.
    """

    def __init__(self, spec, cin, rng, prefix, params):
        self.spec = spec
        self.prefix = prefix
        self.params = params
        C, W = spec.channels, spec.kernel_width
        gain2 = 2.0 / (1.0 + spec.slope ** 2)
        _dense(params, rng, cin, C, prefix + "in")
        for i in range(spec.layers):
            p = f"{prefix}conv{i}"
            if spec.separable:
                params[p + ".depth"] = _he(rng, (W, C), W, 1.0, p + ".depth")
                params[p + ".point.w"] = _he(rng, (C, C), C, gain2, p + ".point.w")
                params[p + ".point.b"] = _zeros((C,), p + ".point.b")
            else:
                params[p + ".w"] = _he(rng, (W, C, C), W * C, gain2, p + ".w")
                params[p + ".b"] = _zeros((C,), p + ".b")

    def __call__(self, x):
        P, s = self.params, self.spec
        h = _apply_dense(P, self.prefix + "in", x)
        for i in range(s.layers):
            p = f"{self.prefix}conv{i}"
            if s.separable:
                h = ad.separable_conv1d(h, P[p + ".depth"], P[p + ".point.w"], P[p + ".point.b"])
            else:
                h = ad.conv1d(h, P[p + ".w"], P[p + ".b"])
            h = ad.leaky_relu(h, s.slope)
        return h


class Model:
    tag = None
    latent = False

    def __init__(self, hyper, seed=0):
        self.hyper = dict(hyper)
        self.params = {}
        self.noise_fixed = None  # when set, observation noise std is clamped to this value

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def noise_head_names(self):
        return []

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def discretize(self, batch):
        return make_discretization(batch.all_inputs(), self.hyper["density"], MARGIN)


# ---------------------------------------------------------------------------
# ConvCNP
# ---------------------------------------------------------------------------


class ConvCNP(Model):
    tag = "convcnp"

    def __init__(self, cnn=None, density=DENSITY, seed=0):
        cnn = cnn or CnnSpec()
        super().__init__({"cnn": asdict(cnn), "density": density}, seed)
        self.cnn_spec = cnn
        rng = np.random.default_rng(seed)
        self.ls = LengthscaleSet.initial(1.0 / density, "ls.")
        self.params.update({f"ls.{n}": v for n, v in self.ls.raw.items()})
        self.cnn = CNN(cnn, 2, rng, "cnn.", self.params)
        _dense(self.params, rng, cnn.channels, 1, "head_mu")
        _dense(self.params, rng, cnn.channels, 1, "head_sigma")

    def grid_outputs(self, batch, disc):
        rep = embed(batch.xc, batch.yc, batch.mc, disc, self.ls["embed_data"], self.ls["embed_density"])
        h = self.cnn(rep.channels)
        f_mu = _apply_dense(self.params, "head_mu", h)
        f_sigma = ad.softplus(_apply_dense(self.params, "head_sigma", h))
        return f_mu, f_sigma

    def predict(self, batch, disc=None):
        """Per-target (mu, sigma), each a (B, M) Value."""
        disc = disc or self.discretize(batch)
        f_mu, f_sigma = self.grid_outputs(batch, disc)
        mu = smooth(f_mu, disc, batch.xt, self.ls["smooth_mean"])
        sigma = smooth(f_sigma, disc, batch.xt, self.ls["smooth_std"])
        B, M = batch.xt.shape
        return mu.reshape(B, M), sigma.reshape(B, M)


# ---------------------------------------------------------------------------
# ConvNP
# ---------------------------------------------------------------------------


class ConvNP(Model):
    tag = "convnp"
    latent = True

    def __init__(self, cnn=None, density=DENSITY, latent_channels=LATENT_CHANNELS, noise="het", seed=0):
        cnn = cnn or CnnSpec()
        if noise not in ("het", "hom"):
            raise ValueError("noise must be 'het' or 'hom'")
        super().__init__(
            {"cnn": asdict(cnn), "density": density, "latent_channels": latent_channels, "noise": noise}, seed
        )
        self.cnn_spec = cnn
        self.noise = noise
        Z = latent_channels
        rng = np.random.default_rng(seed)
        self.ls = LengthscaleSet.initial(1.0 / density, "ls.")
        self.params.update({f"ls.{n}": v for n, v in self.ls.raw.items()})
        self.enc = CNN(cnn, 2, rng, "enc.", self.params)
        _dense(self.params, rng, cnn.channels, Z, "enc.head_mu")
        _dense(self.params, rng, cnn.channels, Z, "enc.head_sigma")
        self.dec = CNN(cnn, Z, rng, "dec.", self.params)
        _dense(self.params, rng, cnn.channels, 1, "dec.head_mu")
        _dense(self.params, rng, cnn.channels, 1, "dec.head_sigma")

    def noise_head_names(self):
        return ["dec.head_sigma.w", "dec.head_sigma.b", "ls.smooth_std"]

    def encode(self, xc, yc, mc, disc):
        """Latent field mean and std, each (B, K, Z)."""
        rep = embed(xc, yc, mc, disc, self.ls["embed_data"], self.ls["embed_density"])
        h = self.enc(rep.channels)
        mu = _apply_dense(self.params, "enc.head_mu", h)
        sigma = ad.softplus(_apply_dense(self.params, "enc.head_sigma", h))
        return mu, sigma

    def decode(self, z, xt, disc):
        """z is (B, L, K, Z); returns per-sample target (mu, sigma), each (B, L, M)."""
        B, L, K, Z = z.shape
        M = xt.shape[1]
        h = self.dec(z.reshape(B * L, K, Z))
        f_mu = _apply_dense(self.params, "dec.head_mu", h)
        targets = np.asarray(xt, dtype=np.float64)
        mu = smooth(f_mu, disc, targets, self.ls["smooth_mean"]).reshape(B, L, M)
        if self.noise_fixed is not None:
            return mu, ad.Value(np.full((B, L, M), self.noise_fixed))
        f_sigma = _apply_dense(self.params, "dec.head_sigma", h)
        if self.noise == "hom":
            pooled = ad.softplus(f_sigma.mean(axis=1))  # (B*L, 1)
            sigma = pooled.reshape(B, L, 1) * np.ones((1, 1, M))
        else:
            sigma = ad.softplus(smooth(f_sigma, disc, targets, self.ls["smooth_std"])).reshape(B, L, M)
        return mu, sigma


# ---------------------------------------------------------------------------
# vanilla NP
# ---------------------------------------------------------------------------


class NeuralProcess(Model):
    tag = "np"
    latent = True

    def __init__(self, width=NP_WIDTH, latent_dim=NP_WIDTH, noise="het", seed=0, density=DENSITY):
        super().__init__({"width": width, "latent_dim": latent_dim, "noise": noise, "density": density}, seed)
        self.noise = noise
        H, Z = width, latent_dim
        rng = np.random.default_rng(seed)
        P = self.params
        _dense(P, rng, 2, H, "enc.l0")
        _dense(P, rng, H, H, "enc.l1")
        _dense(P, rng, H, H, "enc.l2")
        _dense(P, rng, H, H, "enc.post0")
        _dense(P, rng, H, Z, "enc.head_mu")
        _dense(P, rng, H, Z, "enc.head_sigma")
        # first decoder layer split into x and z blocks so z need not be tiled over targets
        P["dec.l0.wx"] = _uniform(rng, (1, H), 1 + Z, "dec.l0.wx")
        P["dec.l0.wz"] = _uniform(rng, (Z, H), 1 + Z, "dec.l0.wz")
        P["dec.l0.b"] = _uniform(rng, (H,), 1 + Z, "dec.l0.b")
        _dense(P, rng, H, H, "dec.l1")
        _dense(P, rng, H, H, "dec.l2")
        _dense(P, rng, H, 1, "dec.head_mu")
        _dense(P, rng, H, 1, "dec.head_sigma")

    def noise_head_names(self):
        return ["dec.head_sigma.w", "dec.head_sigma.b"]

    def discretize(self, batch):
        return None

    def encode(self, xc, yc, mc, disc=None):
        """Pooled latent mean and std, each (B, Z). Empty contexts pool to the zero vector."""
        P = self.params
        xc = np.asarray(xc, dtype=np.float64)
        xc, yc, mc = canonical_order(xc, np.asarray(yc, dtype=np.float64), np.asarray(mc, dtype=np.float64))
        inp = np.stack([xc, yc], axis=-1)  # (B, N, 2)
        h = ad.leaky_relu(_apply_dense(P, "enc.l0", inp), LEAK)
        h = ad.leaky_relu(_apply_dense(P, "enc.l1", h), LEAK)
        h = _apply_dense(P, "enc.l2", h)
        count = np.maximum(mc.sum(axis=1), 1.0)
        pooled = (h * mc[..., None]).sum(axis=1) * (1.0 / count)[:, None]
        g = ad.leaky_relu(_apply_dense(P, "enc.post0", pooled), LEAK)
        mu = _apply_dense(P, "enc.head_mu", g)
        sigma = ad.softplus(_apply_dense(P, "enc.head_sigma", g))
        return mu, sigma

    def decode(self, z, xt, disc=None):
        """z is (B, L, Z); returns (mu, sigma), each (B, L, M)."""
        P = self.params
        B, L, Z = z.shape
        M = xt.shape[1]
        hz = ad.linear(z, P["dec.l0.wz"]).reshape(B, L, 1, -1)
        hx = ad.linear(np.asarray(xt, dtype=np.float64).reshape(B, 1, M, 1), P["dec.l0.wx"], P["dec.l0.b"])
        h = ad.leaky_relu(hz + hx, LEAK)
        h = ad.leaky_relu(_apply_dense(P, "dec.l1", h), LEAK)
        h = ad.leaky_relu(_apply_dense(P, "dec.l2", h), LEAK)
        mu = _apply_dense(P, "dec.head_mu", h).reshape(B, L, M)
        if self.noise_fixed is not None:
            return mu, ad.Value(np.full((B, L, M), self.noise_fixed))
        f_sigma = _apply_dense(P, "dec.head_sigma", h).reshape(B, L, M)
        if self.noise == "hom":
            return mu, ad.softplus(f_sigma.mean(axis=2, keepdims=True)) * np.ones((1, 1, M))
        return mu, ad.softplus(f_sigma)


MODEL_TAGS = ("convcnp", "convnp", "np")


def build_model(tag, hyper=None, seed=0, process="matern52"):
    """Construct a freshly initialised model from its tag and hyperparameters."""
    hyper = dict(hyper or {})
    if tag in ("convcnp", "convnp"):
        cnn = CnnSpec(**hyper["cnn"]) if "cnn" in hyper else CnnSpec.for_process(process, hyper.get("density", DENSITY))
        density = hyper.get("density", DENSITY)
        if tag == "convcnp":
            return ConvCNP(cnn, density, seed=seed)
        return ConvNP(cnn, density, hyper.get("latent_channels", LATENT_CHANNELS), hyper.get("noise", "het"), seed=seed)
    if tag == "np":
        return NeuralProcess(hyper.get("width", NP_WIDTH), hyper.get("latent_dim", NP_WIDTH), hyper.get("noise", "het"), seed=seed)
    raise ValueError(f"unknown model {tag!r}; expected one of {', '.join(MODEL_TAGS)}")


# ---------------------------------------------------------------------------
# latent sampling helpers
# ---------------------------------------------------------------------------


def draw_noise(rng, batch_size, L, zshape):
    return rng.standard_normal((batch_size, L) + tuple(zshape))


def sample_latents(mu, sigma, eps):
    """Reparameterised draws: mu, sigma are (B, *Z); eps is (B, L, *Z)."""
    B = mu.shape[0]
    zshape = mu.shape[1:]
    mu_b = mu.reshape((B, 1) + zshape)
    sigma_b = sigma.reshape((B, 1) + zshape)
    return ad.reparam_sample(mu_b, sigma_b, eps)


# ---------------------------------------------------------------------------
# single-task conveniences (numpy in, numpy out)
# ---------------------------------------------------------------------------


def convcnp_forward(model, xc, yc, xt):
    with ad.no_grad():
        mu, sigma = model.predict(from_arrays(xc, yc, xt))
    return mu.data[0], sigma.data[0]


def _task_disc(model, xc, xt):
    return make_discretization(np.concatenate([np.ravel(xc), np.ravel(xt)]), model.hyper["density"], MARGIN)


def convnp_encode(model, xc, yc, disc):
    xc = np.asarray(xc, dtype=np.float64).reshape(1, -1)
    with ad.no_grad():
        mu, sigma = model.encode(xc, np.asarray(yc, dtype=np.float64).reshape(1, -1), np.ones_like(xc), disc)
    return GridGaussian(disc, mu.data[0], sigma.data[0])


def convnp_sample(model, gg, xt, L, rng):
    if L < 1:
        raise ValueError("L must be at least 1")
    xt = np.asarray(xt, dtype=np.float64).reshape(1, -1)
    eps = draw_noise(rng, 1, L, gg.mu.shape)
    with ad.no_grad():
        z = sample_latents(ad.Value(gg.mu[None]), ad.Value(gg.sigma[None]), eps)
        mu, sigma = model.decode(z, xt, gg.disc)
    return PredictiveSamples(mu.data[0], sigma.data[0], model.noise)


def np_forward(model, xc, yc, xt, L, rng):
    if L < 1:
        raise ValueError("L must be at least 1")
    b = from_arrays(xc, yc, xt)
    with ad.no_grad():
        mu_z, sigma_z = model.encode(b.xc, b.yc, b.mc)
        z = sample_latents(mu_z, sigma_z, draw_noise(rng, 1, L, mu_z.shape[1:]))
        mu, sigma = model.decode(z, b.xt)
    return PredictiveSamples(mu.data[0], sigma.data[0], model.noise)


def latent_predict(model, xc, yc, xt, L, rng):
    """Per-sample predictions of either latent model for one task."""
    if model.tag == "np":
        return np_forward(model, xc, yc, xt, L, rng)
    return convnp_sample(model, convnp_encode(model, xc, yc, _task_disc(model, xc, xt)), xt, L, rng)


__all__ = [
    "Batch",
    "CnnSpec",
    "ConvCNP",
    "ConvNP",
    "NeuralProcess",
    "GridGaussian",
    "PredictiveSamples",
    "build_model",
    "convcnp_forward",
    "convnp_encode",
    "convnp_sample",
    "np_forward",
    "latent_predict",
]

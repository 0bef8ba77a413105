"""Synthetic 1D processes and the task sampler used for meta-training.

Four Gaussian-process kernels (EQ, Matern-5/2, noisy mixture, weakly
periodic) and a random truncated-Fourier sawtooth. EQ and Matern use
lengthscale 0.25, the second mixture component 1, and the weakly periodic
decay 0.5. An alternative parameterisation is kept behind
``KernelSpec(tag, alt_form=True)`` for comparison. Its Matern form is not
positive definite, so it can be evaluated but not sampled from.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

KERNEL_TAGS = ("eq", "matern52", "noisy_mixture", "weakly_periodic")
PROCESS_TAGS = KERNEL_TAGS + ("sawtooth",)

#: diagonal jitter added to every Gram matrix before factorisation
JITTER = 1e-12
#: Cholesky retries multiply the jitter by 10 up to this value
MAX_JITTER = 1e-4

NOISE_VARIANCE = 1e-3  # delta term of the noisy-mixture kernel

_ALIASES = {
    "eq": "eq",
    "matern": "matern52",
    "matern52": "matern52",
    "matern-52": "matern52",
    "matern_52": "matern52",
    "noisy_mixture": "noisy_mixture",
    "noisy-mixture": "noisy_mixture",
    "mixture": "noisy_mixture",
    "weakly_periodic": "weakly_periodic",
    "weakly-periodic": "weakly_periodic",
    "sawtooth": "sawtooth",
}


def canonical_tag(name):
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise ValueError(f"unknown process {name!r}; expected one of {', '.join(PROCESS_TAGS)}")
    return _ALIASES[key]


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    tag: str
    alt_form: bool = False

    def __post_init__(self):
        tag = canonical_tag(self.tag)
        if tag not in KERNEL_TAGS:
            raise ValueError(f"{self.tag!r} is not a kernel")
        object.__setattr__(self, "tag", tag)

    @property
    def has_noise(self):
        return self.tag == "noisy_mixture"

    @property
    def stationary(self):
        return True


@dataclass(frozen=True)
class SawtoothSpec:
    amplitude: float = 1.0
    freq_range: tuple = (3.0, 5.0)
    shift_range: tuple = (-5.0, 5.0)
    terms_range: tuple = (10, 20)


@dataclass(frozen=True)
class ProcessSpec:
    tag: str
    kernel: KernelSpec = None
    sawtooth: SawtoothSpec = None

    @classmethod
    def from_tag(cls, name):
        tag = canonical_tag(name)
        if tag == "sawtooth":
            return cls(tag, sawtooth=SawtoothSpec())
        return cls(tag, kernel=KernelSpec(tag))

    @property
    def is_gp(self):
        return self.kernel is not None


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _stationary_part(spec, t, t2):
    t = np.asarray(t, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    r = t - t2
    r2 = r * r
    if spec.tag == "eq":
        return np.exp(-r2 / 8.0) if spec.alt_form else np.exp(-8.0 * r2)
    if spec.tag == "matern52":
        d = 4.0 * np.abs(r)
        s5 = math.sqrt(5.0)
        lin = 4.0 * s5 * d if spec.alt_form else s5 * d
        return (1.0 + lin + 5.0 / 3.0 * d * d) * np.exp(-s5 * d)
    if spec.tag == "noisy_mixture":
        first = np.exp(-r2 / 8.0) if spec.alt_form else np.exp(-8.0 * r2)
        return first + np.exp(-0.5 * r2)
    if spec.tag == "weakly_periodic":
        a1, a2 = np.cos(8 * np.pi * t), np.sin(8 * np.pi * t)
        b1, b2 = np.cos(8 * np.pi * t2), np.sin(8 * np.pi * t2)
        decay = r2 / 8.0 if spec.alt_form else 2.0 * r2
        return np.exp(-0.5 * (a1 - b1) ** 2 - 0.5 * (a2 - b2) ** 2 - decay)
    raise ValueError(spec.tag)


def kernel_eval(spec, t, t2):
    """k(t, t2) for scalars; the delta term fires when t == t2."""
    v = float(_stationary_part(spec, t, t2))
    if spec.has_noise and t == t2:
        v += NOISE_VARIANCE
    return v


def gram(spec, xs, xs2=None):
    """Covariance matrix between two input sets.

    The noisy-mixture delta term is per observation: it is added to the
    diagonal of a self-Gram (``xs2 is None``) and never to cross blocks, so
    repeated inputs get independent noise.
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    same = xs2 is None
    xs2 = xs if same else np.asarray(xs2, dtype=np.float64).reshape(-1)
    K = _stationary_part(spec, xs[:, None], xs2[None, :])
    if same and spec.has_noise:
        K = K + NOISE_VARIANCE * np.eye(xs.size)
    return K


def jittered_cholesky(K, jitter=JITTER, max_jitter=MAX_JITTER):
    """Lower Cholesky factor of K + jitter*I, escalating jitter x10 on failure."""
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), jitter
    eye = np.eye(n)
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(K + j * eye), j
        except np.linalg.LinAlgError:
            if j >= max_jitter:
                break
            j *= 10.0
    try:
        cond = np.linalg.cond(K)
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise CholeskyError(f"Cholesky failed up to jitter {max_jitter:g} (condition estimate {cond:.3g})")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_gp(spec, inputs, rng):
    """One joint draw from N(0, K + jitter I) at ``inputs``."""
    xs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    if xs.size == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(xs)):
        raise ValueError("inputs must be finite")
    L, _ = jittered_cholesky(gram(spec, xs))
    return L @ rng.standard_normal(xs.size)


def sample_sawtooth(inputs, rng, spec=SawtoothSpec()):
    """Truncated Fourier sawtooth with one random (frequency, shift, terms) draw."""
    xs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    freq = rng.uniform(*spec.freq_range)
    shift = rng.uniform(*spec.shift_range)
    terms = int(rng.integers(spec.terms_range[0], spec.terms_range[1] + 1))
    if xs.size == 0:
        return np.zeros(0)
    k = np.arange(1, terms + 1)
    phase = 2.0 * np.pi * freq * (xs[:, None] - shift) * k
    series = ((-1.0) ** k * np.sin(phase) / k).sum(axis=1)
    A = spec.amplitude
    return A / 2.0 - A / np.pi * series


def sample_function(process, inputs, rng):
    if process.is_gp:
        return sample_gp(process.kernel, inputs, rng)
    return sample_sawtooth(inputs, rng, process.sawtooth)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


@dataclass
class Task:
    xc: np.ndarray
    yc: np.ndarray
    xt: np.ndarray
    yt: np.ndarray

    def __post_init__(self):
        for name in ("xc", "yc", "xt", "yt"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if self.xc.shape != self.yc.shape or self.xt.shape != self.yt.shape:
            raise ValueError("inputs and outputs must have matching lengths")

    @property
    def n_context(self):
        return self.xc.size

    @property
    def n_target(self):
        return self.xt.size

    def shifted(self, delta):
        return Task(self.xc + delta, self.yc, self.xt + delta, self.yt)

    def to_json(self):
        return json.dumps({k: getattr(self, a).tolist() for k, a in (("cx", "xc"), ("cy", "yc"), ("tx", "xt"), ("ty", "yt"))})

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(d["cx"], d["cy"], d["tx"], d["ty"])


def _intervals(spec):
    spec = [tuple(map(float, spec))] if np.ndim(spec) == 1 else [tuple(map(float, iv)) for iv in spec]
    for lo, hi in spec:
        if not hi > lo:
            raise ValueError(f"empty interval [{lo}, {hi}]")
    return tuple(spec)


@dataclass(frozen=True)
class TaskProtocol:
    """Where inputs are drawn and how many. Ranges are tuples of intervals."""

    context_ranges: tuple = ((-2.0, 2.0),)
    target_ranges: tuple = ((-2.0, 2.0),)
    context_sizes: tuple = (0, 50)  # inclusive bounds of a uniform integer law
    target_size: int = 50
    regime: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "context_ranges", _intervals(self.context_ranges))
        object.__setattr__(self, "target_ranges", _intervals(self.target_ranges))
        lo, hi = self.context_sizes
        if lo < 0 or hi < lo or self.target_size < 1:
            raise ValueError("context sizes must be a non-empty non-negative range and target size >= 1")
        if self.regime not in ("train", "within", "beyond", "extrap"):
            raise ValueError(f"unknown regime {self.regime!r}")


def train_protocol():
    return TaskProtocol()


def sample_union(intervals, n, rng):
    """Uniform draws from a union of disjoint intervals."""
    lengths = np.array([hi - lo for lo, hi in intervals])
    if len(intervals) == 1:
        lo, hi = intervals[0]
        return rng.uniform(lo, hi, size=n)
    which = rng.choice(len(intervals), size=n, p=lengths / lengths.sum())
    u = rng.uniform(0.0, 1.0, size=n)
    los = np.array([iv[0] for iv in intervals])[which]
    return los + u * lengths[which]


def sample_task(protocol, process, rng):
    lo, hi = protocol.context_sizes
    nc = int(rng.integers(lo, hi + 1))
    xc = sample_union(protocol.context_ranges, nc, rng)
    xt = sample_union(protocol.target_ranges, protocol.target_size, rng)
    y = sample_function(process, np.concatenate([xc, xt]), rng)
    return Task(xc, y[:nc], xt, y[nc:])


def sample_tasks(protocol, process, n, seed):
    """``n`` tasks, task ``i`` drawn from its own stream so any subset is reproducible."""
    if isinstance(process, str):
        process = ProcessSpec.from_tag(process)
    return [sample_task(protocol, process, np.random.default_rng([seed, i])) for i in range(n)]

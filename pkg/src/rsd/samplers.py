"""Seedable sampling primitives used by the Gibbs sweep.

Everything draws through a :class:`RngStream` (or a raw numpy Generator),
so a fixed seed reproduces a chain bit for bit and parallel chains can be
given non-overlapping substreams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri_exp


class RngStream:
    """A seeded random stream with non-overlapping child streams.

    Wraps ``numpy.random.Generator`` seeded through a ``SeedSequence`` so
    that ``spawn`` derives children that never overlap the parent or each
    other. A stream is owned by exactly one chain at a time.
    """

    def __init__(self, seed: int | None = None, _sequence=None):
        if _sequence is None:
            _sequence = np.random.SeedSequence(seed)
        self.seed = seed
        self._sequence = _sequence
        self.gen = np.random.default_rng(_sequence)

    def spawn(self, n: int) -> list["RngStream"]:
        """Derive ``n`` independent child streams."""
        return [RngStream(_sequence=s) for s in self._sequence.spawn(n)]

    def __repr__(self):  # pragma: no cover
        return f"RngStream(seed={self.seed!r})"


def _gen(rng) -> np.random.Generator:
    """Accept an RngStream or a bare numpy Generator."""
    return rng.gen if isinstance(rng, RngStream) else rng


@dataclass(frozen=True)
class TruncBox:
    """Open truncation interval (lo, hi), applied per coordinate."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"invalid truncation box: lo={self.lo} >= hi={self.hi}")


UNIT_BOX = TruncBox(-1.0, 1.0)


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw under the shape-rate convention (mean = shape/rate)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValueError("gamma shape and rate must be positive")
    return _gen(rng).gamma(shape, 1.0 / rate, size=size)


def sample_inverse_gamma(shape, scale, rng, size=None):
    """Inverse-gamma draw; equals scale / Gamma(shape, rate=1)."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise ValueError("inverse-gamma shape and scale must be positive")
    return scale / _gen(rng).gamma(shape, 1.0, size=size)


def sample_beta(a, b, rng, size=None):
    """Beta(a, b) draw."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("beta parameters must be positive")
    return _gen(rng).beta(a, b, size=size)


def sample_categorical(weights, rng) -> int:
    """Index draw with P(j) proportional to weights[j].

    Weights need not be normalized; they must be non-negative with at
    least one strictly positive entry.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("at least one weight must be positive")
    u = _gen(rng).random() * total
    return int(np.searchsorted(np.cumsum(w), u, side="right"))


def sample_categorical_rows(probs, rng) -> np.ndarray:
    """One categorical draw per row of a (n, k) matrix of probabilities.

    Rows must already be normalized; used by the per-observation
    membership updates after log-space weight construction.
    """
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=1)
    u = _gen(rng).random(probs.shape[0])
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_trunc_normal(mean, sd, box: TruncBox, rng, size=None):
    """Normal(mean, sd^2) conditioned to the open interval (box.lo, box.hi).

    Uses the inverse-CDF method evaluated through ``log_ndtr`` /
    ``ndtri_exp`` (erfc-based tail evaluation), which stays exact even
    when the interval sits far out in one tail, where naive CDF
    differencing or rejection sampling break down.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    if size is None:
        size = np.broadcast(mean, sd).shape
    a = (box.lo - mean) / sd
    b = (box.hi - mean) / sd
    a, b = np.broadcast_to(a, size).copy(), np.broadcast_to(b, size).copy()

    # Reflect intervals in the upper tail onto the lower tail, where the
    # log-CDF keeps full precision.
    flip = a + b > 0
    a[flip], b[flip] = -b[flip], -a[flip]

    log_pa = log_ndtr(a)
    log_pb = log_ndtr(b)
    u = 1.0 - _gen(rng).random(size)  # in (0, 1]
    log_u = log_pb + np.log(u + (1.0 - u) * np.exp(log_pa - log_pb))
    z = ndtri_exp(log_u)
    z[flip] = -z[flip]

    x = mean + sd * z
    lo_open = np.nextafter(box.lo, box.hi)
    hi_open = np.nextafter(box.hi, box.lo)
    x = np.clip(x, lo_open, hi_open)
    return x if x.shape else float(x)


def sample_trunc_bvn(mean, var, box: TruncBox, rng):
    """Two independent truncated-normal coordinates (density factorizes)."""
    mean = np.asarray(mean, dtype=float)
    if mean.shape[-1] != 2:
        raise ValueError("mean must have two coordinates")
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("var must be positive")
    sd = np.sqrt(var)
    return sample_trunc_normal(mean, sd[..., None], box, rng)


def sample_inverse_gaussian(mu, lam, rng, size=None):
    """Inverse-Gaussian draw with mean mu and variance mu^3/lam.

    numpy's ``wald`` implements the Michael-Schucany-Haas transformation,
    which is exact and rejection-free.
    """
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(mu <= 0) or np.any(lam <= 0):
        raise ValueError("inverse-Gaussian parameters must be positive")
    return _gen(rng).wald(mu, lam, size=size)


def sample_mvn(mean, cov, rng) -> np.ndarray:
    """Multivariate normal draw via the lower Cholesky factor."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(cov) if np.all(np.isfinite(cov)) else np.inf
        raise np.linalg.LinAlgError(
            f"covariance is not symmetric positive-definite (cond={cond:.3e})"
        ) from exc
    z = _gen(rng).standard_normal(mean.shape[0])
    return mean + chol @ z

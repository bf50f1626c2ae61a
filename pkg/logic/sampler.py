"""
Exact MGGD variate generation through the stochastic representation

    x = tau * A u,   A A^T = m M,   tau^(2 beta) ~ Gamma(p / (2 beta), scale=2),

with u uniform on the unit sphere.

Random numbers come from numpy's PCG64 seeded by a SeedSequence whose spawn
key is the stream id, so parallel runs get independent, replayable streams.
Within a batch of n draws the consumption order is fixed: the n gamma
variates for tau first, then the n*p normal components of u in row-major
order. numpy's gamma sampler is the Marsaglia-Tsang squeeze method.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .linalg import factor_sqrt
from .model import SampleSet, check_beta

logger = logging.getLogger(__name__)

UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class RngSeed:
    master_seed: int
    stream_id: int = 0
    substream: tuple = ()

    def __post_init__(self):
        for name, value in (("master_seed", self.master_seed), ("stream_id", self.stream_id)):
            if not 0 <= int(value) <= UINT64_MAX:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self):
        seq = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(int(self.stream_id), *map(int, self.substream)))
        return np.random.Generator(np.random.PCG64(seq))


def make_rng(seed):
    """Accept an RngSeed, an integer master seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return RngSeed(int(seed)).generator()


def sample_tau(beta, p, rng, size=None):
    """Radial variate: G^(1/(2 beta)) with G ~ Gamma(p/(2 beta), scale 2)."""
    beta = check_beta(beta)
    if p < 1:
        raise ValueError(f"dimension must be positive, got {p}")
    g = make_rng(rng).gamma(shape=p / (2.0 * beta), scale=2.0, size=size)
    return np.power(g, 1.0 / (2.0 * beta))


def sample_sphere(p, rng, size=None):
    """Uniform draws on the unit sphere of R^p by normalizing Gaussian vectors."""
    rng = make_rng(rng)
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, p))
    norms = np.linalg.norm(z, axis=1)
    while np.any(norms == 0.0):
        zero = norms == 0.0
        z[zero] = rng.standard_normal((int(zero.sum()), p))
        norms = np.linalg.norm(z, axis=1)
    u = z / norms[:, None]
    return u[0] if size is None else u


def sample_mggd(params, n, rng):
    """n i.i.d. MGGD observations as a SampleSet."""
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    rng = make_rng(rng)
    a = factor_sqrt(params.sigma)
    tau = sample_tau(params.shape_beta, params.dim, rng, size=n)
    u = sample_sphere(params.dim, rng, size=n)
    logger.debug("drew %d samples (p=%d, beta=%g, m=%g)", n, params.dim, params.shape_beta, params.scale_m)
    return SampleSet.from_array(tau[:, None] * (u @ a.T))

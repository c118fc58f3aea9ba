"""Seeded synthetic change-point series from block-spectrum GPs.

Stands in for external benchmark series: the generating process is a
two-channel block mixture blended through a sigmoid change point, so the
block model family is well-specified for this data and the Gaussian
family is not.
"""

from __future__ import annotations

import numpy as np

from .data import TimeSeries
from .gp import GPModel, sample_prior
from .kernels import ChangePointKernel, MinecraftKernel
from .spectral import (
    AmplitudeMatrixSet,
    BlockBasis,
    BlockComponent,
    MinecraftSpectralModel,
)

DEFAULT_BANDS = ((3.0, 4.0), (9.0, 5.0))
DEFAULT_AMPLITUDES = (
    ((1.0, 0.55), (0.55, 0.4)),
    ((0.3, 0.35), (0.35, 0.9)),
)


def synthetic_pair_kernel(bands=DEFAULT_BANDS, amplitudes=DEFAULT_AMPLITUDES):
    """Two-channel block kernel with the given (center, width) bands."""
    comps = [BlockComponent([c], [w]) for c, w in bands]
    mats = [np.asarray(a, dtype=float) for a in amplitudes]
    amps = AmplitudeMatrixSet.from_matrices(mats, jitter=1e-12)
    return MinecraftKernel(MinecraftSpectralModel(BlockBasis(comps), amps))


def make_changepoint_series(seed, n=150, location=0.5, steepness=30.0,
                            noise_std=0.1, bands=DEFAULT_BANDS,
                            amplitudes=DEFAULT_AMPLITUDES, name=None):
    """Draw one noisy series from the blended block-spectrum process."""
    pair = synthetic_pair_kernel(bands, amplitudes)
    kernel = ChangePointKernel.from_pair(pair, location, steepness)
    times = np.linspace(0.0, 1.0, n)
    locs = times.reshape(-1, 1)
    chans = np.zeros(n, dtype=int)
    f = sample_prior(GPModel(kernel, 0.0), locs, chans, [int(seed), 1], 1)[0]
    rng = np.random.Generator(np.random.Philox([int(seed), 2]))
    y = f + noise_std * rng.standard_normal(n)
    return TimeSeries(times, y, name=name or f"synthetic-{seed}")

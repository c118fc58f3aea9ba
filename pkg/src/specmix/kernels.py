"""Closed-form stationary kernels paired with the spectral models.

Each kernel here is the exact Fourier transform (cycles convention,
``K(r) = integral exp(2*pi*i nu.r) S(nu) dnu``) of a density from
:mod:`specmix.spectral`.  Multi-output kernels expose ``cross_many(i, j,
lags)`` for vectorized evaluation and ``cov_matrix`` for Gram assembly
over interleaved (location, channel) points; the change-point composite
is the one non-stationary citizen and evaluates at point pairs directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gamma as gamma_fn, jv

from .spectral import (
    BlockBasis,
    GaussianMOSpectralModel,
    MaternSpectrum,
    MinecraftSpectralModel,
)

_SINC_TAYLOR_CUTOFF = 1e-6


def sinc(x):
    """sin(pi x) / (pi x) with a quartic Taylor fill near the origin."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    px = np.pi * x
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sin(px) / px
    small = np.abs(x) < _SINC_TAYLOR_CUTOFF
    if np.any(small):
        ps = px[small]
        ps2 = ps * ps
        out[small] = 1.0 - ps2 / 6.0 + ps2 * ps2 / 120.0
    return float(out[0]) if scalar else out


def sigmoid(x, location, steepness):
    """Logistic switch 1 / (1 + exp(-(x - location) * steepness))."""
    if steepness <= 0:
        raise ValueError("steepness must be positive")
    out = expit(steepness * (np.asarray(x, dtype=float) - location))
    return float(out) if out.ndim == 0 else out


def _as_lags(r, dim):
    arr = np.asarray(r, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
        single = True
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
        single = True
    else:
        single = False
    if arr.shape[1] != dim:
        raise ValueError(f"lag has dimension {arr.shape[1]}, kernel has {dim}")
    return arr, single


class StationaryKernel:
    """Base for stationary (cross-)covariances over N channels."""

    n_channels = 1

    @property
    def dim(self):
        raise NotImplementedError

    def cross_many(self, i, j, lags):
        """K_ij at an (M, D) stack of lags, returned as (M,)."""
        raise NotImplementedError

    def cov(self, i, j, r):
        lags, _ = _as_lags(r, self.dim)
        return float(self.cross_many(i, j, lags)[0])

    def k_zero(self):
        """Matrix of K_ij(0) over all channel pairs."""
        n = self.n_channels
        zero = np.zeros((1, self.dim))
        out = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                out[i, j] = self.cross_many(i, j, zero)[0]
        return out

    def cross_block(self, i, j, xa, xb, chunk=512):
        """Dense K_ij(x_a - x_b) block, assembled in row chunks."""
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        xb = np.atleast_2d(np.asarray(xb, dtype=float))
        out = np.empty((xa.shape[0], xb.shape[0]))
        for s in range(0, xa.shape[0], chunk):
            block = xa[s:s + chunk, None, :] - xb[None, :, :]
            vals = self.cross_many(i, j, block.reshape(-1, self.dim))
            out[s:s + chunk] = vals.reshape(-1, xb.shape[0])
        return out

    def cov_matrix(self, xa, cha, xb, chb):
        """Cross-covariance of interleaved (location, channel) point sets."""
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        xb = np.atleast_2d(np.asarray(xb, dtype=float))
        cha = np.asarray(cha, dtype=int)
        chb = np.asarray(chb, dtype=int)
        out = np.empty((xa.shape[0], xb.shape[0]))
        for i in np.unique(cha):
            sel_a = np.flatnonzero(cha == i)
            for j in np.unique(chb):
                sel_b = np.flatnonzero(chb == j)
                out[np.ix_(sel_a, sel_b)] = self.cross_block(
                    int(i), int(j), xa[sel_a], xb[sel_b])
        return out


def _check_antisymmetric(arr, name):
    if not np.allclose(arr, -np.swapaxes(arr, 1, 2), atol=0.0):
        raise ValueError(f"{name} must be antisymmetric in the channel indices")


class MinecraftKernel(StationaryKernel):
    """Multi-output block spectral mixture:

        K_ij(r) = sum_q A^q_ij cos(2 pi r.mu^q) prod_d sinc(r_d w^q_d)

    plus optional per-component channel delays theta^q_ij (one entry per
    input axis) and phases phi^q_ij, both antisymmetric with zero diagonal,
    which shift the cosine/sinc arguments of the cross terms.
    """

    def __init__(self, model: MinecraftSpectralModel, delays=None, phases=None):
        self.model = model
        q, n, d = len(model.basis), model.channels, model.dim
        if delays is None:
            delays = np.zeros((q, n, n, d))
        else:
            delays = np.asarray(delays, dtype=float)
            if delays.shape == (q, n, n) and d == 1:
                delays = delays[..., None]
            if delays.shape != (q, n, n, d):
                raise ValueError(f"delays must have shape {(q, n, n, d)}")
            _check_antisymmetric(delays, "delays")
        if phases is None:
            phases = np.zeros((q, n, n))
        else:
            phases = np.asarray(phases, dtype=float)
            if phases.shape != (q, n, n):
                raise ValueError(f"phases must have shape {(q, n, n)}")
            _check_antisymmetric(phases, "phases")
        self.delays = delays
        self.phases = phases
        self._amps = model.amplitudes.matrices()

    @property
    def n_channels(self):
        return self.model.channels

    @property
    def dim(self):
        return self.model.dim

    @property
    def has_shifts(self):
        return bool(np.any(self.delays) or np.any(self.phases))

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        out = np.zeros(lags.shape[0])
        for q, comp in enumerate(self.model.basis):
            shifted = lags + self.delays[q, i, j]
            cos_arg = 2.0 * np.pi * (shifted @ comp.center) + self.phases[q, i, j]
            out += (self._amps[q][i, j] * np.cos(cos_arg)
                    * np.prod(sinc(shifted * comp.width), axis=1))
        return out

    def component_basis_values(self, lags):
        """Per-component scalar kernels at the given lags, shape (Q, M).

        Ignores delays and phases; with A^q = L^q L^q.T this is the basis
        of the latent decomposition used for efficient joint sampling.
        """
        lags = np.asarray(lags, dtype=float)
        out = np.empty((len(self.model.basis), lags.shape[0]))
        for q, comp in enumerate(self.model.basis):
            out[q] = (np.cos(2.0 * np.pi * (lags @ comp.center))
                      * np.prod(sinc(lags * comp.width), axis=1))
        return out

    def component_weight_matrices(self):
        return self._amps


def minecraft_kernel(kernel: MinecraftKernel, i, j, r):
    """Cross-covariance K_ij(r) of an undelayed block kernel."""
    if kernel.has_shifts:
        raise ValueError("kernel carries delays or phases; "
                         "use delayed_minecraft_kernel")
    return kernel.cov(i, j, r)


def delayed_minecraft_kernel(kernel: MinecraftKernel, i, j, r):
    """Cross-covariance with per-component delays and phases applied."""
    return kernel.cov(i, j, r)


class GaussianMOSMKernel(StationaryKernel):
    """Closed form of the shared-component multi-output Gaussian mixture:

        K_ij(r) = sum_q c^q_ij exp(-2 pi^2 r.Sigma_q r) cos(2 pi r.mu_q)

    with c^q_ii = A[q, i] and c^q_ij the signed geometric mean."""

    def __init__(self, model: GaussianMOSpectralModel):
        self.model = model
        self._mats = model.component_matrices()

    @property
    def n_channels(self):
        return self.model.channels

    @property
    def dim(self):
        return self.model.dim

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        out = np.zeros(lags.shape[0])
        for comp, mat in zip(self.model.components, self._mats):
            decay = np.exp(-2.0 * np.pi ** 2
                           * np.sum((lags * comp.std) ** 2, axis=1))
            out += mat[i, j] * decay * np.cos(2.0 * np.pi * (lags @ comp.mean))
        return out

    def component_basis_values(self, lags):
        """Per-component scalar kernels at the given lags, shape (Q, M)."""
        lags = np.asarray(lags, dtype=float)
        out = np.empty((len(self.model.components), lags.shape[0]))
        for q, comp in enumerate(self.model.components):
            decay = np.exp(-2.0 * np.pi ** 2
                           * np.sum((lags * comp.std) ** 2, axis=1))
            out[q] = decay * np.cos(2.0 * np.pi * (lags @ comp.mean))
        return out

    def component_weight_matrices(self):
        return self._mats

    has_shifts = False


@dataclass(eq=False)
class GaussianSMKernel(StationaryKernel):
    """Single-output Gaussian spectral mixture,
    K(r) = sum_i A_i exp(-2 pi^2 r.Sigma_i r) cos(2 pi r.mu_i)."""

    means: np.ndarray
    stds: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.stds = np.atleast_2d(np.asarray(self.stds, dtype=float))
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        if self.stds.shape != self.means.shape:
            raise ValueError("means and stds must share shape (Q, D)")
        if self.amplitudes.shape[0] != self.means.shape[0]:
            raise ValueError("one amplitude per component required")
        if np.any(self.amplitudes < 0) or np.any(self.stds <= 0):
            raise ValueError("amplitudes must be >= 0 and stds > 0")

    @property
    def dim(self):
        return self.means.shape[1]

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        out = np.zeros(lags.shape[0])
        for mu, std, amp in zip(self.means, self.stds, self.amplitudes):
            out += (amp * np.exp(-2.0 * np.pi ** 2 * np.sum((lags * std) ** 2, axis=1))
                    * np.cos(2.0 * np.pi * (lags @ mu)))
        return out


def gaussian_sm_kernel(kernel: GaussianSMKernel, r):
    return kernel.cov(0, 0, r)


@dataclass(eq=False)
class BlockSMKernel(StationaryKernel):
    """Single-output block spectral mixture,
    K(r) = sum_i A_i cos(2 pi r.mu_i) prod_d sinc(r_d w_id)."""

    basis: BlockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        if self.amplitudes.shape[0] != len(self.basis):
            raise ValueError("one amplitude per component required")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")

    @property
    def dim(self):
        return self.basis.dim

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        out = np.zeros(lags.shape[0])
        for comp, amp in zip(self.basis, self.amplitudes):
            out += (amp * np.cos(2.0 * np.pi * (lags @ comp.center))
                    * np.prod(sinc(lags * comp.width), axis=1))
        return out


def block_sm_kernel(kernel: BlockSMKernel, r):
    return kernel.cov(0, 0, r)


def _ball_char(u, order):
    """Characteristic function of the uniform unit ball in `order` dims,
    evaluated at radius u: 2^(n/2) Gamma(n/2 + 1) J_{n/2}(u) / u^(n/2)."""
    u = np.asarray(u, dtype=float)
    half = order / 2.0
    const = 2.0 ** half * gamma_fn(half + 1.0)
    small = u < 1e-8
    safe = np.where(small, 1.0, u)
    out = np.where(small, 1.0, const * jv(half, safe) / safe ** half)
    return out


class EllipsoidBesselKernel(StationaryKernel):
    """Multi-output kernel whose components are uniform densities on
    symmetrised ellipsoid pairs (semi-axes w_d / 2 about +-mu):

        K_ij(r) = sum_q A^q_ij cos(2 pi r.mu^q) g_n(pi ||r o w^q||)

    where g_n collapses the per-axis sinc product into one Bessel factor
    of order n/2 and g_n(0) = 1 fixes K_ij(0) = sum_q A^q_ij.  The order
    defaults to the input dimension, which makes D = 1 coincide with the
    rectangular block kernel.
    """

    def __init__(self, model: MinecraftSpectralModel, order=None):
        self.model = model
        self.order = model.dim if order is None else int(order)
        if self.order < 1:
            raise ValueError("order must be at least 1")
        self._amps = model.amplitudes.matrices()

    @property
    def n_channels(self):
        return self.model.channels

    @property
    def dim(self):
        return self.model.dim

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        out = np.zeros(lags.shape[0])
        for q, comp in enumerate(self.model.basis):
            u = np.pi * np.linalg.norm(lags * comp.width, axis=1)
            out += (self._amps[q][i, j]
                    * np.cos(2.0 * np.pi * (lags @ comp.center))
                    * _ball_char(u, self.order))
        return out


def ellipsoid_bessel_kernel(kernel: EllipsoidBesselKernel, i, j, r):
    return kernel.cov(i, j, r)


@dataclass(eq=False)
class MaternKernel(StationaryKernel):
    """Isotropic Matern covariance for smoothness 1/2, 3/2 or 5/2."""

    smoothness: float
    lengthscale: float
    variance: float
    dims: int = 1

    def __post_init__(self):
        MaternSpectrum(self.smoothness, self.lengthscale, self.variance, self.dims)

    @property
    def dim(self):
        return self.dims

    def spectrum(self):
        return MaternSpectrum(self.smoothness, self.lengthscale,
                              self.variance, self.dims)

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        t = np.linalg.norm(lags, axis=1) / self.lengthscale
        if self.smoothness == 0.5:
            shape = np.exp(-t)
        elif self.smoothness == 1.5:
            s3 = np.sqrt(3.0) * t
            shape = (1.0 + s3) * np.exp(-s3)
        else:
            s5 = np.sqrt(5.0) * t
            shape = (1.0 + s5 + s5 * s5 / 3.0) * np.exp(-s5)
        return self.variance * shape


def matern_kernel(kernel: MaternKernel, r):
    return kernel.cov(0, 0, r)


class LMCKernel(StationaryKernel):
    """Mixed independent latents, K_ij(r) = sum_k W_ik W_jk k_k(r)."""

    def __init__(self, mixing, latents):
        self.mixing = np.asarray(mixing, dtype=float)
        self.latents = list(latents)
        if self.mixing.ndim != 2 or self.mixing.shape[1] != len(self.latents):
            raise ValueError("mixing must have one column per latent kernel")
        dims = {k.dim for k in self.latents}
        if len(dims) != 1:
            raise ValueError("latents must share the input dimension")

    @property
    def n_channels(self):
        return self.mixing.shape[0]

    @property
    def dim(self):
        return self.latents[0].dim

    def cross_many(self, i, j, lags):
        lags = np.asarray(lags, dtype=float)
        out = np.zeros(lags.shape[0])
        for k, latent in enumerate(self.latents):
            out += self.mixing[i, k] * self.mixing[j, k] * latent.cross_many(0, 0, lags)
        return out


CROSS_MODES = ("independent", "identical", "multi-output")


class ChangePointKernel:
    """Sigmoid-blended pair of processes, a non-stationary single-output
    covariance on scalar inputs.

    With s(x) the logistic switch, the covariance of
    f = s f1 + (1 - s) f2 is

        K(x, x') = s s' k1 + s (1-s') k12 + (1-s) s' k21 + (1-s)(1-s') k2

    where the cross terms follow the mode: zero for `independent`,
    k1 itself for `identical` (f1 = f2), or the off-diagonal of a
    two-channel stationary kernel for `multi-output`.
    """

    n_channels = 1
    dim = 1

    def __init__(self, left, right, location, steepness,
                 mode="independent", pair=None):
        if mode not in CROSS_MODES:
            raise ValueError(f"mode must be one of {CROSS_MODES}")
        if steepness <= 0:
            raise ValueError("steepness must be positive")
        if mode == "multi-output":
            if pair is None or pair.n_channels != 2:
                raise ValueError("multi-output mode needs a two-channel kernel")
            if pair.dim != 1:
                raise ValueError("change-point composition is one-dimensional")
            left = _ChannelView(pair, 0, 0)
            right = _ChannelView(pair, 1, 1)
        else:
            for k in (left, right):
                if k.n_channels != 1 or k.dim != 1:
                    raise ValueError("left/right must be single-output 1-d kernels")
        self.left = left
        self.right = right
        self.location = float(location)
        self.steepness = float(steepness)
        self.mode = mode
        self.pair = pair

    @classmethod
    def identical(cls, kernel, location, steepness):
        return cls(kernel, kernel, location, steepness, mode="identical")

    @classmethod
    def from_pair(cls, pair, location, steepness):
        return cls(None, None, location, steepness, mode="multi-output", pair=pair)

    def switch(self, x):
        return sigmoid(x, self.location, self.steepness)

    def _cross_lagged(self, i, j, xa, xb):
        lag = (xa[:, None] - xb[None, :]).reshape(-1, 1)
        if self.mode == "independent":
            return np.zeros((xa.shape[0], xb.shape[0]))
        if self.mode == "identical":
            return self.left.cross_many(0, 0, lag).reshape(xa.shape[0], xb.shape[0])
        return self.pair.cross_many(i, j, lag).reshape(xa.shape[0], xb.shape[0])

    def _mixture_fast_path(self):
        # shift-free mixtures let all four blocks reuse one basis sweep
        pair = self.pair
        if (self.mode == "multi-output" and pair is not None
                and not getattr(pair, "has_shifts", True)
                and hasattr(pair, "component_basis_values")):
            return pair
        return None

    def cov_pairs(self, xa, xb):
        """Covariance matrix K(x_a, x_b') over two location vectors."""
        xa = np.atleast_1d(np.asarray(xa, dtype=float)).ravel()
        xb = np.atleast_1d(np.asarray(xb, dtype=float)).ravel()
        sa = np.atleast_1d(self.switch(xa))
        sb = np.atleast_1d(self.switch(xb))
        lag = (xa[:, None] - xb[None, :]).reshape(-1, 1)
        fast = self._mixture_fast_path()
        if fast is not None:
            basis = fast.component_basis_values(lag)
            wmats = np.asarray(fast.component_weight_matrices())
            shape = (len(xa), len(xb))
            k1 = (wmats[:, 0, 0] @ basis).reshape(shape)
            k2 = (wmats[:, 1, 1] @ basis).reshape(shape)
            k12 = k21 = (wmats[:, 0, 1] @ basis).reshape(shape)
        else:
            shape = (len(xa), len(xb))
            k1 = self.left.cross_many(0, 0, lag).reshape(shape)
            k2 = self.right.cross_many(0, 0, lag).reshape(shape)
            k12 = self._cross_lagged(0, 1, xa, xb)
            k21 = self._cross_lagged(1, 0, xa, xb)
        return (np.outer(sa, sb) * k1
                + np.outer(sa, 1.0 - sb) * k12
                + np.outer(1.0 - sa, sb) * k21
                + np.outer(1.0 - sa, 1.0 - sb) * k2)

    def cov(self, x, xp):
        return float(self.cov_pairs([x], [xp])[0, 0])

    def prior_variance(self, x):
        """Marginal prior variance profile K(x, x)."""
        x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        s = np.atleast_1d(self.switch(x))
        zero = np.zeros((1, 1))
        k1 = float(self.left.cross_many(0, 0, zero)[0])
        k2 = float(self.right.cross_many(0, 0, zero)[0])
        if self.mode == "independent":
            k12 = k21 = 0.0
        elif self.mode == "identical":
            k12 = k21 = k1
        else:
            k12 = float(self.pair.cross_many(0, 1, zero)[0])
            k21 = float(self.pair.cross_many(1, 0, zero)[0])
        return (s * s * k1 + s * (1.0 - s) * (k12 + k21)
                + (1.0 - s) * (1.0 - s) * k2)

    def cov_matrix(self, xa, cha, xb, chb):
        cha = np.asarray(cha, dtype=int)
        chb = np.asarray(chb, dtype=int)
        if np.any(cha != 0) or np.any(chb != 0):
            raise ValueError("change-point kernel is single-output")
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        xb = np.atleast_2d(np.asarray(xb, dtype=float))
        return self.cov_pairs(xa.ravel(), xb.ravel())


class _ChannelView(StationaryKernel):
    """Single-output view of one channel pair of a multi-output kernel."""

    def __init__(self, parent, i, j):
        self.parent = parent
        self.i = i
        self.j = j

    @property
    def dim(self):
        return self.parent.dim

    def cross_many(self, i, j, lags):
        return self.parent.cross_many(self.i, self.j, lags)


def changepoint_kernel(kernel: ChangePointKernel, x, xp):
    """Non-stationary covariance K(x, x') of the blended pair."""
    return kernel.cov(x, xp)

"""Spectral densities for stationary multi-output covariances.

Everything here lives in the Fourier domain with frequencies measured in
cycles per input unit, so a kernel and its density are related by

    K(r) = integral exp(2*pi*i nu.r) S(nu) dnu .

Densities come in two families: rectangular blocks of constant height
(finite bandwidth, can be arranged with disjoint supports) and Gaussian
bumps (infinite tails, unavoidable overlap).  Multi-output models attach
an N x N amplitude structure to each component; evaluating a model at a
frequency yields the pointwise spectral matrix S(nu) whose (i, j) entry
is the cross-spectral density of channels i and j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import UndefinedCoherenceError

# Auto-spectra below this are treated as exactly zero when normalizing.
COHERENCE_FLOOR = 1e-300

MATERN_SMOOTHNESS = (0.5, 1.5, 2.5)


def _freeze(a, dim=None):
    """Return a read-only float array, optionally checking its length."""
    a = np.atleast_1d(np.asarray(a, dtype=float)).copy()
    if a.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ValueError(f"expected length {dim}, got {a.shape[0]}")
    a.setflags(write=False)
    return a


def _as_points(nu, dim):
    """Normalize frequency input to shape (M, dim); remember if it was single."""
    arr = np.asarray(nu, dtype=float)
    if arr.ndim <= 1:
        arr = arr.reshape(1, -1) if arr.ndim == 1 else arr.reshape(1, 1)
        single = True
    else:
        single = False
    if arr.shape[1] != dim:
        raise ValueError(f"frequency has dimension {arr.shape[1]}, model has {dim}")
    return arr, single


@dataclass(eq=False)
class BlockComponent:
    """A symmetrised pair of axis-aligned spectral rectangles.

    The component stores one rectangle, centred at `center` with full
    widths `width`; its mirror image about the origin is implied.  A
    component centred exactly at the origin is its own mirror and is
    counted once.
    """

    center: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        self.center = _freeze(self.center)
        self.width = _freeze(self.width, dim=self.center.shape[0])
        if not np.all(self.width > 0):
            raise ValueError("block widths must be strictly positive")

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def at_origin(self):
        return bool(np.all(self.center == 0.0))

    def rectangles(self):
        """(lo, hi) corner pairs of the stored rectangle and, unless the
        component sits at the origin, its mirror."""
        half = self.width / 2.0
        rects = [(self.center - half, self.center + half)]
        if not self.at_origin:
            rects.append((-self.center - half, -self.center + half))
        return rects


@dataclass(eq=False)
class BlockBasis:
    """Ordered collection of block components sharing one input dimension."""

    components: list[BlockComponent]

    def __post_init__(self):
        self.components = list(self.components)
        if not self.components:
            raise ValueError("basis needs at least one component")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("components must share the input dimension")

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def dim(self):
        return self.components[0].dim


def _open_boxes_intersect(lo_a, hi_a, lo_b, hi_b):
    return bool(np.all(np.minimum(hi_a, hi_b) > np.maximum(lo_a, lo_b)))


def validate_nonoverlap(basis):
    """Check that all rectangles in a basis (mirrors included) are disjoint.

    Returns ``(True, None)`` when every pair of open rectangles has empty
    intersection, else ``(False, (i, j))`` with the 0-based indices of the
    first offending component pair (``i == j`` flags a component that
    straddles the origin and collides with its own mirror).
    """
    tagged = []
    for idx, comp in enumerate(basis):
        for rect in comp.rectangles():
            tagged.append((idx, rect))
    for a in range(len(tagged)):
        ia, (lo_a, hi_a) = tagged[a]
        for b in range(a + 1, len(tagged)):
            ib, (lo_b, hi_b) = tagged[b]
            if _open_boxes_intersect(lo_a, hi_a, lo_b, hi_b):
                return False, (min(ia, ib), max(ia, ib))
    return True, None


def block_pair_density(component, nu):
    """Density of a symmetrised block pair at frequency `nu`.

    The value is ``prod(1/w_d)`` halved over each open rectangle and zero
    elsewhere (boundaries included in "elsewhere"); the function
    integrates to one.  Accepts a single frequency vector or an (M, D)
    stack and returns a scalar or (M,) array accordingly.
    """
    pts, single = _as_points(nu, component.dim)
    half = component.width / 2.0
    height = 1.0 / np.prod(component.width)
    inside_pos = np.all(np.abs(pts - component.center) < half, axis=1)
    inside_neg = np.all(np.abs(pts + component.center) < half, axis=1)
    out = 0.5 * height * (inside_pos.astype(float) + inside_neg.astype(float))
    return float(out[0]) if single else out


@dataclass(eq=False)
class AmplitudeMatrixSet:
    """Per-component N x N amplitude matrices stored via lower-triangular
    factors, so every derived matrix A = L L^T is symmetric PSD."""

    factors: list[np.ndarray]

    def __post_init__(self):
        cleaned = []
        shape = None
        for L in self.factors:
            L = np.asarray(L, dtype=float)
            if L.ndim != 2 or L.shape[0] != L.shape[1]:
                raise ValueError("factors must be square matrices")
            if shape is None:
                shape = L.shape
            elif L.shape != shape:
                raise ValueError("all factors must share one shape")
            L = np.tril(L).copy()
            L.setflags(write=False)
            cleaned.append(L)
        if not cleaned:
            raise ValueError("need at least one factor")
        self.factors = cleaned

    def __len__(self):
        return len(self.factors)

    @property
    def channels(self):
        return self.factors[0].shape[0]

    def matrices(self):
        """The derived amplitude matrices A^q = L^q (L^q)^T."""
        return [L @ L.T for L in self.factors]

    @classmethod
    def from_matrices(cls, matrices, jitter=0.0):
        """Build factors by Cholesky of each (PSD) matrix plus `jitter` I."""
        factors = []
        for A in matrices:
            A = np.asarray(A, dtype=float)
            n = A.shape[0]
            factors.append(np.linalg.cholesky(A + jitter * np.eye(n)))
        return cls(factors)


@dataclass(eq=False)
class MinecraftSpectralModel:
    """Block basis plus amplitude matrices: the density is

        S_ij(nu) = sum_q A^q_ij * block_pair_density(c^q, nu)

    which is PSD at every frequency because disjoint supports leave at
    most one (PSD-weighted) component active."""

    basis: BlockBasis
    amplitudes: AmplitudeMatrixSet

    def __post_init__(self):
        if len(self.basis) != len(self.amplitudes):
            raise ValueError("one amplitude matrix per basis component required")

    @property
    def channels(self):
        return self.amplitudes.channels

    @property
    def dim(self):
        return self.basis.dim

    def density(self, nu):
        pts, single = _as_points(nu, self.dim)
        n = self.channels
        out = np.zeros((pts.shape[0], n, n))
        for comp, amp in zip(self.basis, self.amplitudes.matrices()):
            d = block_pair_density(comp, pts)
            out += d[:, None, None] * amp
        return out[0] if single else out


def minecraft_density(model, nu):
    """Pointwise spectral matrix of a block model; see the model docstring."""
    return model.density(nu)


@dataclass(eq=False)
class GaussianComponent:
    """A Gaussian spectral bump with diagonal covariance diag(std**2)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = _freeze(self.mean)
        self.std = _freeze(self.std, dim=self.mean.shape[0])
        if not np.all(self.std > 0):
            raise ValueError("stds must be strictly positive")

    @property
    def dim(self):
        return self.mean.shape[0]

    def pair_density(self, nu):
        """Symmetrised pair density (G(nu) + G(-nu)) / 2; integrates to 1."""
        pts, single = _as_points(nu, self.dim)
        out = 0.5 * (_diag_gauss(pts, self.mean, self.std)
                     + _diag_gauss(-pts, self.mean, self.std))
        return float(out[0]) if single else out


def _diag_gauss(pts, mean, std):
    z = (pts - mean) / std
    norm = np.prod(std) * (2.0 * np.pi) ** (mean.shape[0] / 2.0)
    return np.exp(-0.5 * np.sum(z * z, axis=1)) / norm


def _validate_sign_matrix(signs, n):
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (n, n):
        raise ValueError(f"sign matrix must be {n}x{n}")
    if not np.all(np.isin(signs, (-1.0, 1.0))):
        raise ValueError("signs must be +1 or -1")
    if np.any(np.diag(signs) != 1.0) or np.any(signs != signs.T):
        raise ValueError("sign matrix must be symmetric with unit diagonal")
    # Pointwise PSD needs s_ij = s_i * s_j for some channel sign vector.
    s = signs[:, 0]
    if np.any(np.outer(s, s) != signs):
        raise ValueError("sign matrix is not factorizable as s_i * s_j")
    signs = signs.copy()
    signs.setflags(write=False)
    return signs


@dataclass(eq=False)
class GaussianMOSpectralModel:
    """Gaussian mixture spectrum shared across channels.

    Every channel reuses the same component means and stds; channel i
    scales component q by the nonnegative amplitude A[q, i].  The cross
    term between channels takes the geometric mean of their amplitudes
    with an optional per-pair sign, so diagonal and off-diagonal entries
    share one mixture shape per component.
    """

    components: list[GaussianComponent]
    channel_amplitudes: np.ndarray
    cross_signs: np.ndarray | None = None

    def __post_init__(self):
        self.components = list(self.components)
        if not self.components:
            raise ValueError("need at least one component")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("components must share the input dimension")
        amp = np.asarray(self.channel_amplitudes, dtype=float)
        if amp.ndim != 2 or amp.shape[0] != len(self.components):
            raise ValueError("channel_amplitudes must have shape (Q, N)")
        if np.any(amp < 0):
            raise ValueError("amplitudes must be nonnegative")
        amp = amp.copy()
        amp.setflags(write=False)
        self.channel_amplitudes = amp
        n = amp.shape[1]
        if self.cross_signs is None:
            self.cross_signs = np.ones((n, n))
            self.cross_signs.setflags(write=False)
        else:
            self.cross_signs = _validate_sign_matrix(self.cross_signs, n)

    @property
    def channels(self):
        return self.channel_amplitudes.shape[1]

    @property
    def dim(self):
        return self.components[0].dim

    def component_matrices(self):
        """Rank-one amplitude matrix of each component (signs applied)."""
        out = []
        for q in range(len(self.components)):
            root = np.sqrt(self.channel_amplitudes[q])
            out.append(self.cross_signs * np.outer(root, root))
        return out

    def density(self, nu):
        pts, single = _as_points(nu, self.dim)
        n = self.channels
        out = np.zeros((pts.shape[0], n, n))
        for comp, mat in zip(self.components, self.component_matrices()):
            out += comp.pair_density(pts)[:, None, None] * mat
        return out[0] if single else out


def gaussian_mo_density(model, nu):
    """Pointwise spectral matrix of the shared-component Gaussian model."""
    return model.density(nu)


@dataclass(eq=False)
class GaussianPairSpectrum:
    """Two-channel Gaussian mixture where each channel owns its component
    shapes, paired index-wise.

    The cross-spectrum of paired components is the pointwise geometric
    mean of the two channel terms, which is the most correlated
    cross-spectrum this mixture form can express.  Only the spectral side
    exists; there is no closed-form kernel when the paired shapes differ.
    """

    components_a: list[GaussianComponent]
    components_b: list[GaussianComponent]
    amplitudes_a: np.ndarray
    amplitudes_b: np.ndarray

    def __post_init__(self):
        if len(self.components_a) != len(self.components_b):
            raise ValueError("channels must have the same number of components")
        self.amplitudes_a = _freeze(self.amplitudes_a, dim=len(self.components_a))
        self.amplitudes_b = _freeze(self.amplitudes_b, dim=len(self.components_b))
        if np.any(self.amplitudes_a < 0) or np.any(self.amplitudes_b < 0):
            raise ValueError("amplitudes must be nonnegative")

    channels = 2

    @property
    def dim(self):
        return self.components_a[0].dim

    def density(self, nu):
        pts, single = _as_points(nu, self.dim)
        m = pts.shape[0]
        out = np.zeros((m, 2, 2))
        for comp_a, comp_b, a_a, a_b in zip(
            self.components_a, self.components_b,
            self.amplitudes_a, self.amplitudes_b,
        ):
            gap = _diag_gauss(pts, comp_a.mean, comp_a.std)
            gan = _diag_gauss(-pts, comp_a.mean, comp_a.std)
            gbp = _diag_gauss(pts, comp_b.mean, comp_b.std)
            gbn = _diag_gauss(-pts, comp_b.mean, comp_b.std)
            out[:, 0, 0] += 0.5 * a_a * (gap + gan)
            out[:, 1, 1] += 0.5 * a_b * (gbp + gbn)
            cross = 0.5 * np.sqrt(a_a * a_b) * (np.sqrt(gap * gbp) + np.sqrt(gan * gbn))
            out[:, 0, 1] += cross
            out[:, 1, 0] += cross
        return out[0] if single else out


@dataclass(eq=False)
class MaternSpectrum:
    """Isotropic Matern spectral density, normalized so the density
    integrates to `variance` (the kernel value at lag zero)."""

    smoothness: float
    lengthscale: float
    variance: float
    dim: int = 1

    def __post_init__(self):
        if self.smoothness not in MATERN_SMOOTHNESS:
            raise ValueError(f"smoothness must be one of {MATERN_SMOOTHNESS}")
        if self.lengthscale <= 0 or self.variance <= 0:
            raise ValueError("lengthscale and variance must be positive")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")

    def density(self, nu):
        pts, single = _as_points(nu, self.dim)
        rho2 = np.sum(pts * pts, axis=1)
        s, d, ell = self.smoothness, self.dim, self.lengthscale
        const = (self.variance * 2.0 ** d * np.pi ** (d / 2.0)
                 * gamma_fn(s + d / 2.0) * (2.0 * s) ** s
                 / (gamma_fn(s) * ell ** (2.0 * s)))
        out = const * (2.0 * s / ell ** 2 + 4.0 * np.pi ** 2 * rho2) ** (-(s + d / 2.0))
        return float(out[0]) if single else out


def matern_spectral_density(spec, nu):
    """Isotropic Matern density at `nu`; see MaternSpectrum."""
    return spec.density(nu)


@dataclass(eq=False)
class TargetSpectrumLMC:
    """Multi-output target spectrum from linearly mixed independent latents:

        S_ij(nu) = sum_k W_ik W_jk S_k(nu)

    with one spectral density per latent.  PSD pointwise as a sum of
    scaled outer products."""

    mixing: np.ndarray
    latents: list[MaternSpectrum]

    def __post_init__(self):
        W = np.asarray(self.mixing, dtype=float)
        if W.ndim != 2:
            raise ValueError("mixing must be a matrix")
        if not np.all(np.isfinite(W)):
            raise ValueError("mixing must be finite")
        if W.shape[1] != len(self.latents):
            raise ValueError("one mixing column per latent required")
        dims = {s.dim for s in self.latents}
        if len(dims) != 1:
            raise ValueError("latents must share the input dimension")
        W = W.copy()
        W.setflags(write=False)
        self.mixing = W

    @property
    def channels(self):
        return self.mixing.shape[0]

    @property
    def dim(self):
        return self.latents[0].dim

    def latent_densities(self, nu):
        pts, single = _as_points(nu, self.dim)
        vals = np.stack([lat.density(pts) for lat in self.latents], axis=1)
        return vals[0] if single else vals

    def density(self, nu):
        pts, single = _as_points(nu, self.dim)
        lat = np.stack([l.density(pts) for l in self.latents], axis=1)  # (M, R)
        out = np.einsum("ik,jk,mk->mij", self.mixing, self.mixing, lat)
        return out[0] if single else out


def lmc_target_density(target, nu):
    """Pointwise spectral matrix of the mixed-latent target."""
    return target.density(nu)


def coherence(model, i, j, nu):
    """Frequency-wise correlation S_ij / sqrt(S_ii S_jj) of two channels.

    Raises UndefinedCoherenceError when either auto-spectrum is (numerically)
    zero at `nu`, which happens between block supports.
    """
    s = model.density(nu)
    if s.ndim == 3:
        sii, sjj, sij = s[:, i, i], s[:, j, j], s[:, i, j]
        if np.any(sii <= COHERENCE_FLOOR) or np.any(sjj <= COHERENCE_FLOOR):
            raise UndefinedCoherenceError(
                "auto-spectrum vanishes at a requested frequency")
        return sij / np.sqrt(sii * sjj)
    sii, sjj = s[i, i], s[j, j]
    if sii <= COHERENCE_FLOOR or sjj <= COHERENCE_FLOOR:
        raise UndefinedCoherenceError(
            f"auto-spectrum vanishes at nu={nu!r}")
    return float(s[i, j] / np.sqrt(sii * sjj))

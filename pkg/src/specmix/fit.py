"""Fitting: spectral projection onto block tilings, L1 amplitude fits for
the Gaussian baseline, and marginal-likelihood optimization.

Two distinct routes produce model parameters.  The spectral route starts
from a known target density: block amplitudes come from integrating the
target over each tile (which keeps every amplitude matrix PSD because
the integral of PSD matrices stays in the cone), while Gaussian channel
amplitudes come from an L1 fit of the auto-spectra.  The likelihood
route knows only data: model families map an unconstrained parameter
vector to a GP model (positives through softplus, block layouts through
cumulative softplus so bands stay disjoint) and a Polak-Ribiere
conjugate-gradient loop climbs the evidence from the best of many
random restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import expit

from .errors import (
    AllRestartsFailedError,
    NonConvergenceError,
    NotPSDError,
    QuadratureError,
)
from .gp import GPModel, log_marginal_likelihood
from .kernels import (
    BlockSMKernel,
    ChangePointKernel,
    GaussianMOSMKernel,
    MinecraftKernel,
    sinc,
)
from .spectral import (
    AmplitudeMatrixSet,
    BlockBasis,
    BlockComponent,
    GaussianComponent,
    GaussianMOSpectralModel,
    MinecraftSpectralModel,
    validate_nonoverlap,
)

_WIDTH_FLOOR = 1e-8
_AMP_FLOOR = 1e-12
_NOISE_FLOOR = 1e-8
_STEEP_FLOOR = 1e-6

# ---------------------------------------------------------------------------
# parameter transforms


def softplus(u):
    """Stable log(1 + exp(u))."""
    return np.logaddexp(0.0, np.asarray(u, dtype=float))


def softplus_inv(x):
    """Inverse of softplus for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("softplus_inv needs positive input")
    return x + np.log1p(-np.exp(-x))


def softplus_grad(u):
    return expit(np.asarray(u, dtype=float))


def edges_from_increments(raw):
    """Strictly increasing band edges (0, e_1, ..., e_Q) from raw draws."""
    inc = softplus(np.asarray(raw, dtype=float)) + _WIDTH_FLOOR
    return np.concatenate([[0.0], np.cumsum(inc)])


def increments_from_edges(edges):
    edges = np.asarray(edges, dtype=float)
    if edges[0] != 0.0 or np.any(np.diff(edges) <= _WIDTH_FLOOR):
        raise ValueError("edges must start at 0 and strictly increase")
    return softplus_inv(np.diff(edges) - _WIDTH_FLOOR)


def blocks_from_edges(edges):
    """Contiguous positive-axis bands (center, width) per block."""
    edges = np.asarray(edges, dtype=float)
    centers = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    return centers, widths


# ---------------------------------------------------------------------------
# tilings and spectral projection


@dataclass(eq=False)
class TilingSpec:
    """Regular symmetric tiling of a frequency box [-h_d, h_d]^D.

    `counts` gives tiles per axis; mirrored tiles pair into one
    symmetrised component each, so an even tile total yields half as many
    components (a center tile, possible only with all-odd counts, stays
    single).
    """

    halfwidths: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.halfwidths = np.atleast_1d(np.asarray(self.halfwidths, dtype=float))
        self.counts = np.atleast_1d(np.asarray(self.counts, dtype=int))
        if self.halfwidths.shape != self.counts.shape:
            raise ValueError("halfwidths and counts must align")
        if np.any(self.halfwidths <= 0) or np.any(self.counts < 1):
            raise ValueError("halfwidths must be positive, counts >= 1")

    @property
    def dim(self):
        return self.halfwidths.shape[0]

    @property
    def tile_widths(self):
        return 2.0 * self.halfwidths / self.counts

    def component_count(self):
        total = int(np.prod(self.counts))
        origin = int(np.all(self.counts % 2 == 1))
        return (total - origin) // 2 + origin

    def basis(self):
        """Block basis holding the canonical half of the tiling."""
        widths = self.tile_widths
        comps = []
        for idx in np.ndindex(*self.counts):
            mirror = tuple(int(n - 1 - k) for k, n in zip(idx, self.counts))
            if idx > mirror:
                continue
            center = -self.halfwidths + (np.asarray(idx) + 0.5) * widths
            if idx == mirror:
                center = np.zeros_like(center)
            comps.append(BlockComponent(center, widths))
        basis = BlockBasis(comps)
        ok, pair = validate_nonoverlap(basis)
        if not ok:
            raise ValueError(f"tiling produced overlapping blocks: {pair}")
        return basis


def _gauss_legendre_grid(lo, hi, order):
    """Tensor-product Gauss-Legendre nodes and weights over a box."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    axis_pts, axis_wts = [], []
    for a, b in zip(lo, hi):
        half = 0.5 * (b - a)
        axis_pts.append(0.5 * (a + b) + half * nodes)
        axis_wts.append(half * weights)
    mesh = np.meshgrid(*axis_pts, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    w = axis_wts[0]
    for nxt in axis_wts[1:]:
        w = np.outer(w, nxt).ravel()
    return grid, w


def project_spectrum(target, tiling, order=16):
    """Block amplitudes from tile integrals of a target spectral matrix.

    Each component gets A^q = 2 * integral of S over its stored rectangle
    (factor 1 for an origin-centred component), evaluated with a fixed
    tensor-product Gauss-Legendre rule.  Raises QuadratureError on
    non-finite target values; the returned set stores Cholesky factors of
    A^q + 1e-12 I.
    """
    basis = tiling.basis() if isinstance(tiling, TilingSpec) else tiling
    matrices = []
    for comp in basis:
        lo = comp.center - comp.width / 2.0
        hi = comp.center + comp.width / 2.0
        grid, weights = _gauss_legendre_grid(lo, hi, order)
        vals = target.density(grid)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("target density produced non-finite values")
        integral = np.einsum("m,mij->ij", weights, vals)
        factor = 1.0 if comp.at_origin else 2.0
        matrices.append(factor * integral)
    return AmplitudeMatrixSet.from_matrices(matrices, jitter=_AMP_FLOOR)


def project_to_minecraft(target, tiling, order=16):
    """Convenience wrapper returning the projected spectral model."""
    basis = tiling.basis()
    return MinecraftSpectralModel(basis, project_spectrum(target, basis, order))


def gaussian_components_for_tiling(tiling):
    """Shared Gaussian components mirroring a block tiling: means at tile
    centers, per-axis std matching the block's peak density."""
    sigma = tiling.tile_widths / np.sqrt(2.0 * np.pi)
    return [GaussianComponent(comp.center, sigma) for comp in tiling.basis()]


def _weighted_median(values, weights):
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])


def fit_gaussian_amplitudes(target, components, grid, cell_volume=1.0,
                            tol=1e-8, max_sweeps=100_000, warm_start=None):
    """Per-channel nonnegative amplitudes minimizing the L1 distance
    between each auto-spectrum and the shared Gaussian mixture on `grid`.

    The objective is the grid estimate of the L1 distance itself,
    ``cell_volume * sum |target - mixture|``.  Exact coordinate descent:
    each update solves its one-dimensional subproblem by a weighted
    median over the points where its basis function is non-negligible,
    clipped at zero.  Stops when a full sweep improves the objective by
    less than `tol`; raises NonConvergenceError after `max_sweeps`
    sweeps.  Returns a (Q, N) amplitude array.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    dens = target.density(grid)
    n_channels = dens.shape[-1]
    phi = np.stack([c.pair_density(grid) for c in components])
    n_comp = phi.shape[0]
    supports = []
    for k in range(n_comp):
        cutoff = 1e-10 * float(np.max(phi[k]))
        supports.append(np.flatnonzero(phi[k] > cutoff))
    out = np.zeros((n_comp, n_channels))
    for ch in range(n_channels):
        t = dens[:, ch, ch]
        a = (np.zeros(n_comp) if warm_start is None
             else np.asarray(warm_start[:, ch], dtype=float).copy())
        resid = t - a @ phi
        objective = cell_volume * float(np.sum(np.abs(resid)))
        for sweep in range(max_sweeps):
            for k in range(n_comp):
                sel = supports[k]
                if sel.size == 0:
                    continue
                phik = phi[k][sel]
                partial = resid[sel] + a[k] * phik
                best = max(0.0, _weighted_median(partial / phik, phik))
                if best != a[k]:
                    resid[sel] -= (best - a[k]) * phik
                    a[k] = best
            if sweep % 64 == 63:
                resid = t - a @ phi  # refresh incremental rounding drift
            new_objective = cell_volume * float(np.sum(np.abs(resid)))
            if objective - new_objective < tol:
                objective = new_objective
                break
            objective = new_objective
        else:
            raise NonConvergenceError(
                f"L1 fit did not converge within {max_sweeps} sweeps")
        out[:, ch] = a
    return out


def spectral_l1_distance(model_a, model_b, grid, cell_volume=1.0):
    """Entrywise L1 distance between two spectral matrices on a grid."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    diff = model_a.density(grid) - model_b.density(grid)
    return float(np.sum(np.abs(diff)) * cell_volume)


def midpoint_grid(halfwidths, counts):
    """Midpoint grid over [-h, h]^D (avoids tile boundaries) and its cell
    volume."""
    halfwidths = np.atleast_1d(np.asarray(halfwidths, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=int))
    axes = [(-h + (np.arange(c) + 0.5) * (2 * h / c))
            for h, c in zip(halfwidths, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = float(np.prod(2.0 * halfwidths / counts))
    return grid, cell


# ---------------------------------------------------------------------------
# model families for likelihood fitting


def _dsinc(x):
    """Derivative of sin(pi x)/(pi x), with a series fill near zero."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (np.cos(np.pi * x) - sinc(x)) / x
    small = np.abs(x) < 1e-6
    if np.any(small):
        xs = x[small]
        out[small] = -(np.pi ** 2) * xs / 3.0 + (np.pi ** 4) * xs ** 3 / 30.0
    return out


def _switch_terms(x, location, steepness):
    s = expit(steepness * (x - location))
    sp = s * (1.0 - s)
    return s, -steepness * sp, (x - location) * sp


@dataclass
class FitOptions:
    """Which parameter groups the optimizer may move, plus the values
    used for frozen groups."""

    freeze_layout: bool = False
    freeze_changepoint: bool = False
    freeze_noise: bool = False
    location: float = 0.5
    steepness: float = 50.0
    noise: float = 0.05


@dataclass
class InitSampler:
    """Gaussian draws in the unconstrained parameter space."""

    loc: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.loc = np.atleast_1d(np.asarray(self.loc, dtype=float))
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if self.loc.shape != self.scale.shape:
            raise ValueError("loc and scale must align")

    def draw(self, rng):
        return self.loc + self.scale * rng.standard_normal(self.loc.shape[0])


class ChangePointFamily:
    """Single-output change-point model over a two-channel stationary
    mixture kernel; subclasses supply the component layout and amplitude
    parameterization.

    Parameter order: [layout, amplitudes, location, raw steepness,
    raw noise], with frozen groups removed from the vector.
    """

    def __init__(self, n_components, options=None):
        self.q = int(n_components)
        self.options = options or FitOptions()
        self._frozen_layout_raw = None

    # -- subclass hooks ----------------------------------------------------
    def _layout_size(self):
        raise NotImplementedError

    def _amp_size(self):
        raise NotImplementedError

    def _build_pair(self, layout_raw, amp_raw):
        """Two-channel stationary kernel for the blended pair."""
        raise NotImplementedError

    def _component_terms(self, layout_raw, lag, need_grads=True):
        """Return (G, dstack, chain): G has shape (Q, n, n); dstack holds
        the component derivatives w.r.t. the constrained layout
        quantities, shape (Q, K, n, n); chain maps a (Q, K) array of
        contraction values to the raw layout gradient vector.  With
        need_grads=False, dstack and chain are None."""
        raise NotImplementedError

    def _amp_entries(self, amp_raw):
        """Return (entries, amp_grads): entries is a (Q, 3) array of
        (m11, m12, m22) per component; amp_grads is one tuple
        (component, dm11, dm12, dm22) per amplitude parameter."""
        raise NotImplementedError

    def default_init_sampler(self, dataset):
        raise NotImplementedError

    # -- shared machinery ----------------------------------------------------
    @property
    def n_params(self):
        n = self._amp_size()
        if not self.options.freeze_layout:
            n += self._layout_size()
        if not self.options.freeze_changepoint:
            n += 2
        if not self.options.freeze_noise:
            n += 1
        return n

    def set_frozen_layout(self, layout_raw):
        self._frozen_layout_raw = np.asarray(layout_raw, dtype=float)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[0] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, "
                             f"got {theta.shape[0]}")
        pos = 0
        if self.options.freeze_layout:
            if self._frozen_layout_raw is None:
                raise ValueError("layout frozen but no layout set")
            layout = self._frozen_layout_raw
        else:
            layout = theta[pos:pos + self._layout_size()]
            pos += self._layout_size()
        amp = theta[pos:pos + self._amp_size()]
        pos += self._amp_size()
        if self.options.freeze_changepoint:
            location = self.options.location
            steepness, steep_raw = self.options.steepness, None
        else:
            location = float(theta[pos])
            steep_raw = float(theta[pos + 1])
            steepness = float(softplus(steep_raw)) + _STEEP_FLOOR
            pos += 2
        if self.options.freeze_noise:
            noise, noise_raw = self.options.noise, None
        else:
            noise_raw = float(theta[pos])
            noise = float(softplus(noise_raw)) + _NOISE_FLOOR
        return layout, amp, location, steepness, steep_raw, noise, noise_raw

    def build(self, theta):
        """Materialize the GP model described by a parameter vector."""
        layout, amp, location, steepness, _, noise, _ = self._split(theta)
        pair = self._build_pair(layout, amp)
        kernel = ChangePointKernel.from_pair(pair, location, steepness)
        return GPModel(kernel, noise)

    def nll(self, theta, dataset):
        """Negative log marginal likelihood; +inf when not factorizable."""
        try:
            return -log_marginal_likelihood(self.build(theta), dataset)
        except NotPSDError:
            return np.inf

    def nll_and_grad(self, theta, dataset):
        """Objective and full analytic gradient in one Gram assembly."""
        (layout, amp, location, steepness,
         steep_raw, noise, noise_raw) = self._split(theta)
        x = dataset.locations.ravel()
        y = dataset.targets
        n = x.shape[0]
        lag = x[:, None] - x[None, :]
        s, ds_dloc, ds_dsteep = _switch_terms(x, location, steepness)
        w11 = np.outer(s, s)
        w12 = np.outer(s, 1.0 - s)
        wx = w12 + w12.T
        w22 = np.outer(1.0 - s, 1.0 - s)

        G, layout_grads = self._component_terms(layout, lag)
        entries, amp_grads = self._amp_entries(amp)

        K = np.zeros((n, n))
        for q_idx in range(self.q):
            m11, m12, m22 = entries[q_idx]
            K += G[q_idx] * (m11 * w11 + m12 * wx + m22 * w22)
        K[np.diag_indices_from(K)] += noise
        try:
            low = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros(self.n_params)
        alpha = cho_solve((low, True), y)
        nll = (0.5 * y @ alpha + np.sum(np.log(np.diag(low)))
               + 0.5 * n * np.log(2.0 * np.pi))
        kinv = cho_solve((low, True), np.eye(n))
        p = kinv - np.outer(alpha, alpha)

        one_minus_s = 1.0 - s
        pg = [p * G[q_idx] for q_idx in range(self.q)]
        h11 = np.array([s @ m @ s for m in pg])
        hx = np.array([2.0 * (s @ m @ one_minus_s) for m in pg])
        h22 = np.array([one_minus_s @ m @ one_minus_s for m in pg])

        grad = np.zeros(self.n_params)
        pos = 0
        if not self.options.freeze_layout:
            for k, pieces in enumerate(layout_grads):
                val = 0.0
                for q_idx, dg in pieces:
                    m11, m12, m22 = entries[q_idx]
                    pdg = p * dg
                    val += (m11 * (s @ pdg @ s)
                            + m12 * 2.0 * (s @ pdg @ one_minus_s)
                            + m22 * (one_minus_s @ pdg @ one_minus_s))
                grad[pos + k] = 0.5 * val
            pos += self._layout_size()

        for k, (q_idx, dm11, dm12, dm22) in enumerate(amp_grads):
            grad[pos + k] = 0.5 * (dm11 * h11[q_idx] + dm12 * hx[q_idx]
                                   + dm22 * h22[q_idx])
        pos += self._amp_size()

        if not self.options.freeze_changepoint:
            g_loc = 0.0
            g_steep = 0.0
            for q_idx in range(self.q):
                m11, m12, m22 = entries[q_idx]
                t = (m11 - m12) * s + (m12 - m22) * one_minus_s
                g_loc += ds_dloc @ pg[q_idx] @ t
                g_steep += ds_dsteep @ pg[q_idx] @ t
            grad[pos] = g_loc
            grad[pos + 1] = g_steep * softplus_grad(steep_raw)
            pos += 2

        if not self.options.freeze_noise:
            grad[pos] = 0.5 * np.trace(p) * softplus_grad(noise_raw)

        return float(nll), grad

    def describe(self, theta):
        layout, amp, location, steepness, _, noise, _ = self._split(theta)
        return {"location": location, "steepness": steepness, "noise": noise}


class BlockChangePointFamily(ChangePointFamily):
    """Two correlated channels sharing Q contiguous spectral bands.

    Layout parameters are raw band-edge increments (cumulative softplus),
    so every parameter vector yields disjoint blocks; each band carries a
    2x2 amplitude Cholesky factor (3 raw entries)."""

    name = "block"

    def _layout_size(self):
        return self.q

    def _amp_size(self):
        return 3 * self.q

    def _blocks(self, layout_raw):
        return blocks_from_edges(edges_from_increments(layout_raw))

    def _build_pair(self, layout_raw, amp_raw):
        centers, widths = self._blocks(layout_raw)
        comps = [BlockComponent([c], [w]) for c, w in zip(centers, widths)]
        factors = [np.array([[amp_raw[3 * q], 0.0],
                             [amp_raw[3 * q + 1], amp_raw[3 * q + 2]]])
                   for q in range(self.q)]
        model = MinecraftSpectralModel(BlockBasis(comps),
                                       AmplitudeMatrixSet(factors))
        return MinecraftKernel(model)

    def _component_terms(self, layout_raw, lag):
        centers, widths = self._blocks(layout_raw)
        G = np.empty((self.q, *lag.shape))
        dG_dmu = np.empty_like(G)
        dG_dw = np.empty_like(G)
        for q_idx, (mu, w) in enumerate(zip(centers, widths)):
            cosm = np.cos(2.0 * np.pi * mu * lag)
            sinm = np.sin(2.0 * np.pi * mu * lag)
            sincm = sinc(w * lag)
            G[q_idx] = cosm * sincm
            dG_dmu[q_idx] = -2.0 * np.pi * lag * sinm * sincm
            dG_dw[q_idx] = cosm * lag * _dsinc(w * lag)
        inc_grad = softplus_grad(layout_raw)
        layout_grads = []
        for m in range(self.q):
            pieces = []
            for q_idx in range(self.q):
                # edge e_k = sum of increments 1..k; block q spans
                # (e_q, e_{q+1}) in 0-based edge indexing
                de_lo = 1.0 if q_idx >= m + 1 else 0.0
                de_hi = 1.0 if q_idx + 1 >= m + 1 else 0.0
                if de_lo == 0.0 and de_hi == 0.0:
                    continue
                dmu = 0.5 * (de_lo + de_hi)
                dw = de_hi - de_lo
                pieces.append((q_idx,
                               inc_grad[m] * (dmu * dG_dmu[q_idx]
                                              + dw * dG_dw[q_idx])))
            layout_grads.append(pieces)
        return G, layout_grads

    def _amp_entries(self, amp_raw):
        entries = np.empty((self.q, 3))
        grads = []
        for q_idx in range(self.q):
            l11, l21, l22 = amp_raw[3 * q_idx: 3 * q_idx + 3]
            entries[q_idx] = (l11 * l11, l11 * l21, l21 * l21 + l22 * l22)
            grads.append((q_idx, 2.0 * l11, l21, 0.0))
            grads.append((q_idx, 0.0, l11, 2.0 * l21))
            grads.append((q_idx, 0.0, 0.0, 2.0 * l22))
        return entries, grads

    def default_init_sampler(self, dataset):
        x = dataset.locations.ravel()
        span = float(np.ptp(x)) or 1.0
        f_cover = 0.5 * len(x) / (2.0 * span)
        loc, scale = [], []
        if not self.options.freeze_layout:
            loc += [float(softplus_inv(max(f_cover / self.q, 1e-3)))] * self.q
            scale += [1.0] * self.q
        amp_scale = 1.0 / np.sqrt(self.q)
        loc += [0.0] * (3 * self.q)
        scale += [amp_scale] * (3 * self.q)
        if not self.options.freeze_changepoint:
            loc += [float(np.median(x)), float(softplus_inv(20.0 / span))]
            scale += [span / 6.0, 0.5]
        if not self.options.freeze_noise:
            loc += [float(softplus_inv(0.05))]
            scale += [0.7]
        return InitSampler(np.array(loc), np.array(scale))


class GaussianChangePointFamily(ChangePointFamily):
    """Two correlated channels sharing Q Gaussian spectral components with
    per-channel amplitudes; the cross term is their geometric mean."""

    name = "gaussian"

    def _layout_size(self):
        return 2 * self.q

    def _amp_size(self):
        return 2 * self.q

    def _means_stds(self, layout_raw):
        means = softplus(layout_raw[:self.q])
        stds = softplus(layout_raw[self.q:]) + _WIDTH_FLOOR
        return means, stds

    def _amps(self, amp_raw):
        a1 = softplus(amp_raw[0::2]) + _AMP_FLOOR
        a2 = softplus(amp_raw[1::2]) + _AMP_FLOOR
        return a1, a2

    def _build_pair(self, layout_raw, amp_raw):
        means, stds = self._means_stds(layout_raw)
        a1, a2 = self._amps(amp_raw)
        comps = [GaussianComponent([m], [s]) for m, s in zip(means, stds)]
        model = GaussianMOSpectralModel(comps, np.stack([a1, a2], axis=1))
        return GaussianMOSMKernel(model)

    def _component_terms(self, layout_raw, lag):
        means, stds = self._means_stds(layout_raw)
        G = np.empty((self.q, *lag.shape))
        layout_grads = [None] * (2 * self.q)
        sp_mu = softplus_grad(layout_raw[:self.q])
        sp_sig = softplus_grad(layout_raw[self.q:])
        for q_idx, (mu, sig) in enumerate(zip(means, stds)):
            decay = np.exp(-2.0 * np.pi ** 2 * sig * sig * lag * lag)
            cosm = np.cos(2.0 * np.pi * mu * lag)
            sinm = np.sin(2.0 * np.pi * mu * lag)
            G[q_idx] = decay * cosm
            dmu = -2.0 * np.pi * lag * sinm * decay
            dsig = -4.0 * np.pi ** 2 * sig * (lag * lag) * G[q_idx]
            layout_grads[q_idx] = [(q_idx, sp_mu[q_idx] * dmu)]
            layout_grads[self.q + q_idx] = [(q_idx, sp_sig[q_idx] * dsig)]
        return G, layout_grads

    def _amp_entries(self, amp_raw):
        a1, a2 = self._amps(amp_raw)
        root = np.sqrt(a1 * a2)
        entries = np.stack([a1, root, a2], axis=1)
        grads = []
        sp = softplus_grad(amp_raw)
        for q_idx in range(self.q):
            d1 = sp[2 * q_idx]
            d2 = sp[2 * q_idx + 1]
            grads.append((q_idx, d1, 0.5 * np.sqrt(a2[q_idx] / a1[q_idx]) * d1, 0.0))
            grads.append((q_idx, 0.0, 0.5 * np.sqrt(a1[q_idx] / a2[q_idx]) * d2, d2))
        return entries, grads

    def default_init_sampler(self, dataset):
        x = dataset.locations.ravel()
        span = float(np.ptp(x)) or 1.0
        f_cover = 0.5 * len(x) / (2.0 * span)
        loc, scale = [], []
        if not self.options.freeze_layout:
            loc += [float(softplus_inv(max(f_cover / 4.0, 1e-3)))] * self.q
            scale += [1.5] * self.q
            loc += [float(softplus_inv(max(f_cover / (4.0 * self.q), 1e-3)))] * self.q
            scale += [1.0] * self.q
        loc += [float(softplus_inv(1.0 / self.q))] * (2 * self.q)
        scale += [1.0] * (2 * self.q)
        if not self.options.freeze_changepoint:
            loc += [float(np.median(x)), float(softplus_inv(20.0 / span))]
            scale += [span / 6.0, 0.5]
        if not self.options.freeze_noise:
            loc += [float(softplus_inv(0.05))]
            scale += [0.7]
        return InitSampler(np.array(loc), np.array(scale))


class BlockSMFamily:
    """Single-output stationary block mixture (no change point):
    K = sum_q A_q cos(2 pi mu_q r) sinc(w_q r) + noise, with the same
    band-edge layout parameterization as the change-point family.

    Parameter order: [Q edge increments, Q amplitude roots, raw noise].
    """

    name = "block-sm"

    def __init__(self, n_components):
        self.q = int(n_components)

    @property
    def n_params(self):
        return 2 * self.q + 1

    def _parse(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[0] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters")
        centers, widths = blocks_from_edges(edges_from_increments(theta[:self.q]))
        roots = theta[self.q:2 * self.q]
        noise = float(softplus(theta[-1])) + _NOISE_FLOOR
        return centers, widths, roots, noise

    def build(self, theta):
        centers, widths, roots, noise = self._parse(theta)
        comps = [BlockComponent([c], [w]) for c, w in zip(centers, widths)]
        kernel = BlockSMKernel(BlockBasis(comps), roots * roots)
        return GPModel(kernel, noise)

    def nll(self, theta, dataset):
        try:
            return -log_marginal_likelihood(self.build(theta), dataset)
        except NotPSDError:
            return np.inf

    def nll_and_grad(self, theta, dataset):
        centers, widths, roots, noise = self._parse(theta)
        x = dataset.locations.ravel()
        y = dataset.targets
        n = x.shape[0]
        lag = x[:, None] - x[None, :]
        amps = roots * roots
        G = np.empty((self.q, n, n))
        dG_dmu = np.empty_like(G)
        dG_dw = np.empty_like(G)
        for q_idx, (mu, w) in enumerate(zip(centers, widths)):
            cosm = np.cos(2.0 * np.pi * mu * lag)
            sinm = np.sin(2.0 * np.pi * mu * lag)
            sincm = sinc(w * lag)
            G[q_idx] = cosm * sincm
            dG_dmu[q_idx] = -2.0 * np.pi * lag * sinm * sincm
            dG_dw[q_idx] = cosm * lag * _dsinc(w * lag)
        K = np.einsum("q,qab->ab", amps, G)
        K[np.diag_indices_from(K)] += noise
        try:
            low = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros(self.n_params)
        alpha = cho_solve((low, True), y)
        nll = (0.5 * y @ alpha + np.sum(np.log(np.diag(low)))
               + 0.5 * n * np.log(2.0 * np.pi))
        kinv = cho_solve((low, True), np.eye(n))
        p = kinv - np.outer(alpha, alpha)

        grad = np.zeros(self.n_params)
        inc_grad = softplus_grad(theta[:self.q])
        contract = lambda mat: float(np.sum(p * mat))
        for m in range(self.q):
            val = 0.0
            for q_idx in range(self.q):
                de_lo = 1.0 if q_idx >= m + 1 else 0.0
                de_hi = 1.0 if q_idx + 1 >= m + 1 else 0.0
                if de_lo == 0.0 and de_hi == 0.0:
                    continue
                dmu = 0.5 * (de_lo + de_hi)
                dw = de_hi - de_lo
                val += amps[q_idx] * contract(dmu * dG_dmu[q_idx]
                                              + dw * dG_dw[q_idx])
            grad[m] = 0.5 * inc_grad[m] * val
        for q_idx in range(self.q):
            grad[self.q + q_idx] = 0.5 * 2.0 * roots[q_idx] * contract(G[q_idx])
        grad[-1] = 0.5 * np.trace(p) * softplus_grad(theta[-1])
        return float(nll), grad

    def default_init_sampler(self, dataset):
        x = dataset.locations.ravel()
        span = float(np.ptp(x)) or 1.0
        f_cover = 0.5 * len(x) / (2.0 * span)
        loc = ([float(softplus_inv(max(f_cover / self.q, 1e-3)))] * self.q
               + [0.0] * self.q + [float(softplus_inv(0.05))])
        scale = [1.0] * self.q + [1.0 / np.sqrt(self.q)] * self.q + [0.7]
        return InitSampler(np.array(loc), np.array(scale))


# ---------------------------------------------------------------------------
# objective and optimizer


def objective_and_gradient(family, theta, dataset, method="analytic"):
    """Negative log evidence and its gradient for a family at `theta`.

    `method` is "analytic" or "fd" (central differences with step
    1e-5 * max(1, |theta_k|)); a non-factorizable covariance yields
    (+inf, zero gradient) so restarts can skip bad regions.
    """
    theta = np.asarray(theta, dtype=float)
    if method == "analytic":
        return family.nll_and_grad(theta, dataset)
    if method != "fd":
        raise ValueError("method must be 'analytic' or 'fd'")
    f0 = family.nll(theta, dataset)
    if not np.isfinite(f0):
        return np.inf, np.zeros(theta.shape[0])
    grad = np.zeros(theta.shape[0])
    for k in range(theta.shape[0]):
        h = 1e-5 * max(1.0, abs(theta[k]))
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        f_up, f_down = family.nll(up, dataset), family.nll(down, dataset)
        if np.isfinite(f_up) and np.isfinite(f_down):
            grad[k] = (f_up - f_down) / (2.0 * h)
    return f0, grad


@dataclass
class OptimizerConfig:
    """Restart and conjugate-gradient settings."""

    restarts: int = 50
    iterations: int = 500
    seed: int = 0
    sampler: InitSampler | None = None
    gtol: float = 1e-8
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    optimize_all: bool = False

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class OptimizeResult:
    params: np.ndarray
    objective: float
    trace: np.ndarray
    restart_values: np.ndarray


def _line_search(value_fn, theta, f, g_dot_d, d, config):
    alpha = 1.0
    for _ in range(config.max_backtracks + 1):
        trial = theta + alpha * d
        f_trial = value_fn(trial)
        if np.isfinite(f_trial) and f_trial <= f + config.armijo_c * alpha * g_dot_d:
            return trial, f_trial
        alpha *= config.shrink
    return None, None


def _ncg(theta0, objective, value_fn, config):
    """Polak-Ribiere nonlinear CG with Armijo backtracking; falls back to
    steepest descent on non-descent directions."""
    theta = np.asarray(theta0, dtype=float).copy()
    f, g = objective(theta)
    best_f, best_theta = f, theta.copy()
    trace = [(0, best_f, float(np.max(np.abs(g))) if np.all(np.isfinite(g)) else np.inf)]
    d = -g
    for it in range(1, config.iterations + 1):
        if not np.all(np.isfinite(g)):
            break
        g_dot_d = float(g @ d)
        if g_dot_d >= 0.0:
            d = -g
            g_dot_d = float(g @ d)
        if g_dot_d == 0.0:
            break
        trial, f_trial = _line_search(value_fn, theta, f, g_dot_d, d, config)
        if trial is None and not np.array_equal(d, -g):
            d = -g
            g_dot_d = float(g @ d)
            trial, f_trial = _line_search(value_fn, theta, f, g_dot_d, d, config)
        if trial is None:
            break
        theta = trial
        f_new, g_new = objective(theta)
        beta = max(0.0, float(g_new @ (g_new - g)) / max(float(g @ g), 1e-300))
        d = -g_new + beta * d
        f, g = f_new, g_new
        if f < best_f:
            best_f, best_theta = f, theta.copy()
        trace.append((it, best_f, float(np.max(np.abs(g)))))
        if np.max(np.abs(g)) < config.gtol:
            break
    return best_theta, best_f, trace


def optimize(config, objective, value_fn=None):
    """Random-restart Polak-Ribiere conjugate gradients.

    Draws `restarts` seeded initial points from `config.sampler`, ranks
    them by objective value only, then fully optimizes the best (or every
    one with `optimize_all`).  Returns the best parameters and a
    monotone best-so-far trace of rows (iteration, objective,
    grad_inf_norm).  Raises AllRestartsFailedError when no initial point
    has a finite objective.
    """
    if config.sampler is None:
        raise ValueError("config.sampler must be set")
    if value_fn is None:
        value_fn = lambda t: objective(t)[0]
    inits, values = [], []
    for r in range(config.restarts):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([config.seed, r])))
        theta0 = config.sampler.draw(rng)
        inits.append(theta0)
        values.append(float(value_fn(theta0)))
    values = np.asarray(values)
    if not np.any(np.isfinite(values)):
        raise AllRestartsFailedError(
            f"all {config.restarts} restarts produced non-finite objectives")
    if config.optimize_all:
        candidates = [i for i in range(config.restarts)
                      if np.isfinite(values[i])]
    else:
        candidates = [int(np.argmin(np.where(np.isfinite(values), values,
                                             np.inf)))]
    best = None
    for i in candidates:
        theta, f, trace = _ncg(inits[i], objective, value_fn, config)
        if best is None or f < best[1]:
            best = (theta, f, trace)
    theta, f, trace = best
    return OptimizeResult(params=theta, objective=f,
                          trace=np.asarray(trace, dtype=float),
                          restart_values=values)

"""Command-line interface: bundled diagnostics and fitting workflows.

Subcommands
-----------
coherence         spectral sweep of a two-channel model (auto/cross
                  spectra, Cauchy-Schwarz bound, coherence)
image-demo        three-channel field samples as PPM images plus the
                  lag-zero correlation table for target / block /
                  Gaussian models
changepoint-demo  prior std profiles and sample paths around a change
                  point for all cross-covariance modes
fit-series        load -> split -> standardize -> restarts -> conjugate
                  gradients -> predict -> SMSE on a time series
kernel-eval       closed-form kernel values along a lag sweep
rerun             repeat any command from its manifest

Every run writes a `manifest.yaml` next to its outputs; re-running from
the manifest reproduces all CSV/PPM outputs bitwise.  Exit codes:
0 success, 2 config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np
import yaml

from . import __version__
from .config import model_from_dict, model_to_dict, resolve_config
from .data import load_csv, split_train_test, standardize
from .errors import (
    ConfigError,
    DataError,
    SpecmixError,
)
from .fit import (
    BlockChangePointFamily,
    FitOptions,
    GaussianChangePointFamily,
    InitSampler,
    OptimizerConfig,
    fit_gaussian_amplitudes,
    gaussian_components_for_tiling,
    midpoint_grid,
    objective_and_gradient,
    optimize,
    project_spectrum,
    TilingSpec,
)
from .gp import GPModel, MultiOutputDataset, chol_with_jitter, predict, smse
from .kernels import (
    ChangePointKernel,
    GaussianMOSMKernel,
    LMCKernel,
    MaternKernel,
    MinecraftKernel,
)
from .ppm import to_brightness, write_ppm
from .spectral import COHERENCE_FLOOR, GaussianMOSpectralModel, MinecraftSpectralModel
from .synthetic import make_changepoint_series

PAPER_SCALE_RESTARTS = 1000
PAPER_SCALE_ITERATIONS = 2000


class StageError(SpecmixError):
    """A pipeline stage failed; wraps the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(out_dir, command, cfg, seed, outputs, wall_time):
    doc = {
        "manifest": True,
        "command": command,
        "config": cfg,
        "seed": int(seed),
        "version": __version__,
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "wall_time_s": float(wall_time),
    }
    path = os.path.join(out_dir, "manifest.yaml")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    os.replace(tmp, path)
    return path


def _unwrap_config(cfg, seed_flag):
    """Accept either a plain config or a manifest; resolve the seed."""
    if cfg.get("manifest"):
        inner = cfg["config"]
        seed = cfg.get("seed", 0)
    else:
        inner = cfg
        seed = cfg.get("seed", 0)
    if seed_flag is not None:
        seed = seed_flag
    return inner, int(seed)


def _frequency_grid(spec):
    start = float(spec.get("start", -3.0))
    stop = float(spec.get("stop", 3.0))
    count = int(spec.get("count", 601))
    return np.linspace(start, stop, count)


# ---------------------------------------------------------------------------
# coherence


def cmd_coherence(cfg, out_dir, seed=0):
    model = model_from_dict(cfg["model"])
    if getattr(model, "dim", 1) != 1:
        raise ConfigError("coherence sweeps are one-dimensional")
    i, j = cfg.get("channels", [0, 1])
    nus = _frequency_grid(cfg.get("grid", {}))
    dens = model.density(nus.reshape(-1, 1))
    sii = dens[:, i, i]
    sjj = dens[:, j, j]
    sij = dens[:, i, j]
    bound = np.sqrt(sii * sjj)
    rows = []
    for k, nu in enumerate(nus):
        defined = sii[k] > COHERENCE_FLOOR and sjj[k] > COHERENCE_FLOOR
        coh = sij[k] / bound[k] if defined else float("nan")
        rows.append((nu, sii[k], sjj[k], sij[k], bound[k], coh))
    path = os.path.join(out_dir, "coherence.csv")
    _write_csv(path, ["nu", "S11", "S22", "S12_model", "S12_bound",
                      "coherence"], rows)
    return [path]


# ---------------------------------------------------------------------------
# image demo


def _scalar_gram(values_fn, grid, chunk=512):
    n = grid.shape[0]
    out = np.empty((n, n))
    for s in range(0, n, chunk):
        lags = (grid[s:s + chunk, None, :] - grid[None, :, :]).reshape(-1,
                                                                       grid.shape[1])
        out[s:s + chunk] = values_fn(lags).reshape(-1, n)
    return 0.5 * (out + out.T)


def _pixel_grid(pixels, extent):
    axis = (np.arange(pixels) + 0.5) * (extent / pixels)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def _sample_mixture_field(components, grid, seed_key, n_channels, name):
    """Joint field draw for kernels of the form sum_q M_q g_q(r), where
    each component contributes mixing columns `cols` (N, m) and a scalar
    kernel; independent latent draws keep the Gram factorizations small.
    """
    n = grid.shape[0]
    field = np.zeros((n_channels, n))
    for q, (cols, scalar_kernel) in enumerate(components):
        gram_q = _scalar_gram(
            lambda lags: scalar_kernel.cross_many(0, 0, lags), grid)
        try:
            low, _ = chol_with_jitter(gram_q)
        except SpecmixError as exc:
            raise StageError(f"sampling {name}", exc)
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(seed_key + [q])))
        z = rng.standard_normal((n, cols.shape[1]))
        field += cols @ (low @ z).T
    return field


def _corr_row(k_zero):
    d = np.sqrt(np.diag(k_zero))
    c = k_zero / np.outer(d, d)
    return c[0, 1], c[0, 2], c[1, 2]


def cmd_image_demo(cfg, out_dir, seed=0):
    target = model_from_dict(cfg["target"])
    tiling = TilingSpec(cfg["tiling"]["halfwidths"], cfg["tiling"]["counts"])
    pixels = int(cfg.get("image", {}).get("pixels", 64))
    extent = float(cfg.get("image", {}).get("extent", 16.0))
    l1_spec = cfg.get("l1_grid", {})
    l1_count = int(l1_spec.get("count", 81))
    l1_half = float(l1_spec.get("halfwidth", tiling.halfwidths[0]))

    basis = tiling.basis()
    amplitudes = project_spectrum(target, basis)
    minecraft = MinecraftKernel(MinecraftSpectralModel(basis, amplitudes))

    comps = gaussian_components_for_tiling(tiling)
    grid, cell = midpoint_grid([l1_half] * tiling.dim, [l1_count] * tiling.dim)
    amps = fit_gaussian_amplitudes(target, comps, grid, cell_volume=cell)
    gaussian = GaussianMOSMKernel(GaussianMOSpectralModel(comps, amps))

    latents = [MaternKernel(l.smoothness, l.lengthscale, l.variance, l.dim)
               for l in target.latents]
    lmc = LMCKernel(target.mixing, latents)

    rows = [("target",) + _corr_row(lmc.k_zero()),
            ("minecraft",) + _corr_row(minecraft.k_zero()),
            ("gaussian",) + _corr_row(gaussian.k_zero())]
    corr_path = os.path.join(out_dir, "correlations.csv")
    _write_csv(corr_path, ["model", "corr_rg", "corr_rb", "corr_gb"], rows)

    pix = _pixel_grid(pixels, extent)
    outputs = [corr_path]

    from .kernels import BlockSMKernel, GaussianSMKernel
    from .spectral import BlockBasis

    w = target.mixing
    target_parts = [(w[:, [k]], latent) for k, latent in enumerate(latents)]
    mc_parts = [
        (amplitudes.factors[q],
         BlockSMKernel(BlockBasis([basis.components[q]]), [1.0]))
        for q in range(len(basis))
    ]
    ga_parts = [
        (np.sqrt(amps[q])[:, None],
         GaussianSMKernel(comps[q].mean[None, :], comps[q].std[None, :], [1.0]))
        for q in range(amps.shape[0])
    ]

    for idx, (name, parts) in enumerate(
            [("target", target_parts), ("minecraft", mc_parts),
             ("gaussian", ga_parts)]):
        field = _sample_mixture_field(parts, pix, [seed, idx], 3, name)
        image = to_brightness(field).reshape(3, pixels, pixels)
        path = os.path.join(out_dir, f"{name}.ppm")
        write_ppm(path, np.moveaxis(image, 0, -1).copy(order="C"))
        outputs.append(path)
    return outputs


# ---------------------------------------------------------------------------
# change-point demo


def _rho_pair_kernel(base, rho):
    """Two-channel block kernel with coherence `rho` sharing the layout
    and per-component power of a single-output block kernel."""
    from .spectral import AmplitudeMatrixSet

    root = np.sqrt(max(1.0 - rho * rho, 0.0))
    factors = [np.sqrt(a) * np.array([[1.0, 0.0], [rho, root]])
               for a in base.amplitudes]
    model = MinecraftSpectralModel(base.basis, AmplitudeMatrixSet(factors))
    return MinecraftKernel(model)


def cmd_changepoint_demo(cfg, out_dir, seed=0):
    base = model_from_dict(cfg["kernel"])
    location = float(cfg.get("location", 0.5))
    steepness = float(cfg.get("steepness", 30.0))
    rhos = [float(r) for r in cfg.get("rhos", [0.0, 0.5, 0.9, 1.0])]
    grid_spec = cfg.get("grid", {"start": 0.0, "stop": 1.0, "count": 201})
    xs = np.linspace(float(grid_spec["start"]), float(grid_spec["stop"]),
                     int(grid_spec["count"]))
    n_samples = int(cfg.get("samples", 5))

    modes = [("independent",
              ChangePointKernel(base, base, location, steepness)),
             ("identical",
              ChangePointKernel.identical(base, location, steepness))]
    for rho in rhos:
        pair = _rho_pair_kernel(base, rho)
        modes.append((f"rho_{rho:.2f}",
                      ChangePointKernel.from_pair(pair, location, steepness)))

    header = ["x"] + [name for name, _ in modes]
    std_rows = []
    stds = {name: np.sqrt(kernel.prior_variance(xs)) for name, kernel in modes}
    for k, x in enumerate(xs):
        std_rows.append([x] + [stds[name][k] for name, _ in modes])
    std_path = os.path.join(out_dir, "changepoint_std.csv")
    _write_csv(std_path, header, std_rows)
    outputs = [std_path]

    locs = xs.reshape(-1, 1)
    chans = np.zeros(xs.shape[0], dtype=int)
    for idx, (name, kernel) in enumerate(modes):
        draws = None
        if n_samples > 0:
            from .gp import sample_prior
            draws = sample_prior(GPModel(kernel, 0.0), locs, chans,
                                 [seed, idx], n_samples)
        rows = []
        for k, x in enumerate(xs):
            rows.append([x, 0] + [draws[s, k] for s in range(n_samples)])
        path = os.path.join(out_dir, f"samples_{name}.csv")
        _write_csv(path, ["x", "channel"]
                   + [f"sample_{s}" for s in range(n_samples)], rows)
        outputs.append(path)
    return outputs


# ---------------------------------------------------------------------------
# series fitting


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SpecmixError as exc:
        raise StageError(name, exc)


def _family_for(cfg, name, q):
    freeze = cfg.get("freeze", {})
    options = FitOptions(
        freeze_layout=bool(freeze.get("layout", False)),
        freeze_changepoint=bool(freeze.get("changepoint", False)),
        freeze_noise=bool(freeze.get("noise", False)),
        location=float(freeze.get("location", 0.5)),
        steepness=float(freeze.get("steepness", 50.0)),
        noise=float(freeze.get("noise_value", 0.05)),
    )
    if name == "block":
        return BlockChangePointFamily(q, options)
    if name == "gaussian":
        return GaussianChangePointFamily(q, options)
    raise ConfigError(f"unknown component family {name!r}")


def fit_series_pipeline(cfg, seed=0, paper_scale=False):
    """The full fitting protocol; returns a result dict (no file I/O)."""
    if "synthetic" in cfg:
        syn = dict(cfg["synthetic"])
        syn.setdefault("seed", seed)
        series = _stage("load", make_changepoint_series, **syn)
    else:
        series = _stage("load", load_csv, cfg["input_csv"],
                        cfg.get("time_column", "time"),
                        cfg.get("value_column", "value"))
    split_cfg = cfg.get("split", {})
    train, test = _stage(
        "split", split_train_test, series,
        ratio=float(split_cfg.get("ratio", 0.9)),
        mode=split_cfg.get("mode", "tail"),
        seed=split_cfg.get("seed"))
    train_std, test_std, stats = _stage("standardize", standardize, train, test)

    family_name = cfg.get("family", "block")
    q = int(cfg.get("q", 10))
    family = _family_for(cfg, family_name, q)
    dataset = MultiOutputDataset(train_std.times.reshape(-1, 1),
                                 np.zeros(len(train_std), dtype=int),
                                 train_std.values)

    opt_cfg = cfg.get("optimizer", {})
    restarts = int(opt_cfg.get("restarts", 50))
    iterations = int(opt_cfg.get("iterations", 500))
    if paper_scale:
        restarts = PAPER_SCALE_RESTARTS
        iterations = PAPER_SCALE_ITERATIONS
    gradient = cfg.get("gradient", "analytic")

    sampler = family.default_init_sampler(dataset)
    config = OptimizerConfig(restarts=restarts, iterations=iterations,
                             seed=seed, sampler=sampler,
                             gtol=float(opt_cfg.get("gtol", 1e-6)))
    objective = lambda th: objective_and_gradient(family, th, dataset, gradient)
    value_fn = lambda th: family.nll(th, dataset)
    result = _stage("optimize", optimize, config, objective, value_fn)

    model = family.build(result.params)
    test_dataset_locs = test_std.times.reshape(-1, 1)
    mean_std, var_std = _stage(
        "predict", predict, model, dataset,
        test_dataset_locs, np.zeros(len(test_std), dtype=int))
    mean_raw = mean_std * stats[1] + stats[0]
    score = _stage("smse", smse, mean_raw, test.values, train.values)

    all_locs = series.times.reshape(-1, 1)
    mean_all, var_all = _stage(
        "predict", predict, model, dataset,
        all_locs, np.zeros(len(series), dtype=int))
    return {
        "series": series,
        "family": family_name,
        "model": model,
        "params": result.params,
        "objective": result.objective,
        "trace": result.trace,
        "smse": score,
        "stats": stats,
        "pred_times": series.times,
        "pred_mean": mean_all * stats[1] + stats[0],
        "pred_var": var_all * stats[1] ** 2,
        "restarts": restarts,
        "iterations": iterations,
    }


def cmd_fit_series(cfg, out_dir, seed=0, paper_scale=False):
    res = fit_series_pipeline(cfg, seed=seed, paper_scale=paper_scale)
    trace_path = os.path.join(out_dir, "trace.csv")
    _write_csv(trace_path, ["iter", "objective", "grad_norm"],
               [(int(r[0]), r[1], r[2]) for r in res["trace"]])
    pred_path = os.path.join(out_dir, "predictions.csv")
    _write_csv(pred_path, ["x", "channel", "mean", "var"],
               [(t, 0, m, v) for t, m, v in
                zip(res["pred_times"], res["pred_mean"], res["pred_var"])])
    model_path = os.path.join(out_dir, "fitted_model.yaml")
    doc = {"kernel": model_to_dict(res["model"].kernel),
           "noise_variance": [float(v) for v in res["model"].noise_variance]}
    with open(model_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    report_path = os.path.join(out_dir, "report.yaml")
    with open(report_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump({
            "family": res["family"],
            "smse": float(res["smse"]),
            "objective": float(res["objective"]),
            "n_train": int(np.ceil(0.9 * len(res["series"]))),
            "n_test": len(res["series"]) - int(np.ceil(0.9 * len(res["series"]))),
            "restarts": res["restarts"],
            "iterations": res["iterations"],
        }, fh, sort_keys=False)
    print(f"fit-series[{res['family']}]: SMSE = {res['smse']!r}")
    return [trace_path, pred_path, model_path, report_path]


# ---------------------------------------------------------------------------
# kernel evaluation


def cmd_kernel_eval(cfg, out_dir, seed=0):
    kernel = model_from_dict(cfg["kernel"])
    grid_spec = cfg.get("grid", {"start": -3.0, "stop": 3.0, "count": 601})
    rs = np.linspace(float(grid_spec["start"]), float(grid_spec["stop"]),
                     int(grid_spec["count"]))
    direction = np.asarray(cfg.get("direction", [1.0] * kernel.dim), dtype=float)
    if direction.shape[0] != kernel.dim:
        raise ConfigError("direction length must match kernel dimension")
    lags = rs[:, None] * direction[None, :]
    n = kernel.n_channels
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    cols = {pair: kernel.cross_many(pair[0], pair[1], lags) for pair in pairs}
    header = ["r"] + [f"K{i + 1}{j + 1}" for i, j in pairs]
    rows = [[r] + [cols[p][k] for p in pairs] for k, r in enumerate(rs)]
    path = os.path.join(out_dir, "kernel.csv")
    _write_csv(path, header, rows)
    return [path]


# ---------------------------------------------------------------------------
# argument handling


_COMMANDS = {
    "coherence": cmd_coherence,
    "image-demo": cmd_image_demo,
    "changepoint-demo": cmd_changepoint_demo,
    "fit-series": cmd_fit_series,
    "kernel-eval": cmd_kernel_eval,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="specmix",
        description="spectral mixture kernel diagnostics and fitting")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="config file path, bundled config name, "
                            "or a manifest")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--paper-scale", action="store_true")
    p = sub.add_parser("rerun")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def run_command(command, cfg, out_dir, seed, paper_scale=False):
    os.makedirs(out_dir, exist_ok=True)
    started = time.monotonic()
    fn = _COMMANDS[command]
    if command == "fit-series":
        outputs = fn(cfg, out_dir, seed=seed, paper_scale=paper_scale)
    else:
        outputs = fn(cfg, out_dir, seed=seed)
    _write_manifest(out_dir, command, cfg, seed, outputs,
                    time.monotonic() - started)
    return outputs


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            doc = resolve_config(args.manifest)
            if not doc.get("manifest"):
                raise ConfigError(f"{args.manifest} is not a manifest")
            run_command(doc["command"], doc["config"], args.out,
                        doc.get("seed", 0))
            return 0
        cfg = resolve_config(args.config)
        cfg, seed = _unwrap_config(cfg, args.seed)
        run_command(args.command, cfg, args.out, seed,
                    paper_scale=args.paper_scale)
        return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, (ConfigError, KeyError)):
            return 2
        if isinstance(cause, (DataError, OSError)):
            return 4
        return 3
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    except SpecmixError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

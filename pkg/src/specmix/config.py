"""YAML serialization for spectral models and kernels.

Every model maps to a plain dict with a `type` tag and nested lists of
floats; floats survive a dump/load round trip exactly (shortest-repr
encoding).  Bundled configuration files live under
``specmix/configs/`` and can be addressed by bare name from the CLI.
"""

from __future__ import annotations

import importlib.resources

import numpy as np
import yaml

from .errors import ConfigError
from .kernels import (
    BlockSMKernel,
    ChangePointKernel,
    EllipsoidBesselKernel,
    GaussianMOSMKernel,
    GaussianSMKernel,
    LMCKernel,
    MaternKernel,
    MinecraftKernel,
)
from .spectral import (
    AmplitudeMatrixSet,
    BlockBasis,
    BlockComponent,
    GaussianComponent,
    GaussianMOSpectralModel,
    GaussianPairSpectrum,
    MaternSpectrum,
    MinecraftSpectralModel,
    TargetSpectrumLMC,
)


def _listify(a):
    return np.asarray(a, dtype=float).tolist()


def _block_basis_to_dict(basis):
    return {
        "centers": [_listify(c.center) for c in basis],
        "widths": [_listify(c.width) for c in basis],
    }


def _block_basis_from_dict(d):
    comps = [BlockComponent(c, w) for c, w in zip(d["centers"], d["widths"])]
    return BlockBasis(comps)


def _gaussians_to_dict(components):
    return {
        "means": [_listify(c.mean) for c in components],
        "stds": [_listify(c.std) for c in components],
    }


def _gaussians_from_dict(d):
    return [GaussianComponent(m, s) for m, s in zip(d["means"], d["stds"])]


def model_to_dict(model):
    """Tagged plain-dict form of any supported model or kernel."""
    if isinstance(model, MinecraftSpectralModel):
        return {
            "type": "minecraft",
            "blocks": _block_basis_to_dict(model.basis),
            "amplitude_factors": [_listify(f) for f in model.amplitudes.factors],
        }
    if isinstance(model, MinecraftKernel):
        out = {"type": "minecraft_kernel",
               "model": model_to_dict(model.model)}
        if np.any(model.delays):
            out["delays"] = _listify(model.delays)
        if np.any(model.phases):
            out["phases"] = _listify(model.phases)
        return out
    if isinstance(model, EllipsoidBesselKernel):
        return {"type": "ellipsoid_bessel_kernel",
                "model": model_to_dict(model.model),
                "order": int(model.order)}
    if isinstance(model, GaussianMOSpectralModel):
        out = {"type": "gaussian_mosm",
               "components": _gaussians_to_dict(model.components),
               "channel_amplitudes": _listify(model.channel_amplitudes)}
        if np.any(model.cross_signs != 1.0):
            out["cross_signs"] = _listify(model.cross_signs)
        return out
    if isinstance(model, GaussianMOSMKernel):
        return {"type": "gaussian_mosm_kernel",
                "model": model_to_dict(model.model)}
    if isinstance(model, GaussianPairSpectrum):
        return {
            "type": "gaussian_pair",
            "channel_a": {**_gaussians_to_dict(model.components_a),
                          "amplitudes": _listify(model.amplitudes_a)},
            "channel_b": {**_gaussians_to_dict(model.components_b),
                          "amplitudes": _listify(model.amplitudes_b)},
        }
    if isinstance(model, MaternSpectrum):
        return {"type": "matern_spectrum", "smoothness": model.smoothness,
                "lengthscale": model.lengthscale, "variance": model.variance,
                "dim": model.dim}
    if isinstance(model, MaternKernel):
        return {"type": "matern_kernel", "smoothness": model.smoothness,
                "lengthscale": model.lengthscale, "variance": model.variance,
                "dim": model.dims}
    if isinstance(model, TargetSpectrumLMC):
        return {"type": "lmc_target", "mixing": _listify(model.mixing),
                "latents": [model_to_dict(l) for l in model.latents]}
    if isinstance(model, LMCKernel):
        return {"type": "lmc_kernel", "mixing": _listify(model.mixing),
                "latents": [model_to_dict(l) for l in model.latents]}
    if isinstance(model, GaussianSMKernel):
        return {"type": "gaussian_sm_kernel", "means": _listify(model.means),
                "stds": _listify(model.stds),
                "amplitudes": _listify(model.amplitudes)}
    if isinstance(model, BlockSMKernel):
        return {"type": "block_sm_kernel",
                "blocks": _block_basis_to_dict(model.basis),
                "amplitudes": _listify(model.amplitudes)}
    if isinstance(model, ChangePointKernel):
        out = {"type": "changepoint_kernel", "mode": model.mode,
               "location": model.location, "steepness": model.steepness}
        if model.mode == "multi-output":
            out["pair"] = model_to_dict(model.pair)
        elif model.mode == "identical":
            out["kernel"] = model_to_dict(model.left)
        else:
            out["left"] = model_to_dict(model.left)
            out["right"] = model_to_dict(model.right)
        return out
    raise ConfigError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d):
    """Rebuild a model from its tagged dict form."""
    try:
        tag = d["type"]
    except (TypeError, KeyError):
        raise ConfigError("model config needs a 'type' field")
    try:
        return _BUILDERS[tag](d)
    except KeyError:
        raise ConfigError(f"unknown model type {tag!r}")
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"bad {tag!r} config: {exc}")


_BUILDERS = {
    "minecraft": lambda d: MinecraftSpectralModel(
        _block_basis_from_dict(d["blocks"]),
        AmplitudeMatrixSet([np.asarray(f) for f in d["amplitude_factors"]])),
    "minecraft_kernel": lambda d: MinecraftKernel(
        model_from_dict(d["model"]),
        delays=d.get("delays"), phases=d.get("phases")),
    "ellipsoid_bessel_kernel": lambda d: EllipsoidBesselKernel(
        model_from_dict(d["model"]), order=d.get("order")),
    "gaussian_mosm": lambda d: GaussianMOSpectralModel(
        _gaussians_from_dict(d["components"]),
        np.asarray(d["channel_amplitudes"]),
        cross_signs=(np.asarray(d["cross_signs"])
                     if "cross_signs" in d else None)),
    "gaussian_mosm_kernel": lambda d: GaussianMOSMKernel(
        model_from_dict(d["model"])),
    "gaussian_pair": lambda d: GaussianPairSpectrum(
        _gaussians_from_dict(d["channel_a"]),
        _gaussians_from_dict(d["channel_b"]),
        np.asarray(d["channel_a"]["amplitudes"]),
        np.asarray(d["channel_b"]["amplitudes"])),
    "matern_spectrum": lambda d: MaternSpectrum(
        d["smoothness"], d["lengthscale"], d["variance"], d.get("dim", 1)),
    "matern_kernel": lambda d: MaternKernel(
        d["smoothness"], d["lengthscale"], d["variance"], d.get("dim", 1)),
    "lmc_target": lambda d: TargetSpectrumLMC(
        np.asarray(d["mixing"]),
        [model_from_dict(l) for l in d["latents"]]),
    "lmc_kernel": lambda d: LMCKernel(
        np.asarray(d["mixing"]),
        [model_from_dict(l) for l in d["latents"]]),
    "gaussian_sm_kernel": lambda d: GaussianSMKernel(
        np.asarray(d["means"]), np.asarray(d["stds"]),
        np.asarray(d["amplitudes"])),
    "block_sm_kernel": lambda d: BlockSMKernel(
        _block_basis_from_dict(d["blocks"]), np.asarray(d["amplitudes"])),
    "changepoint_kernel": lambda d: _changepoint_from_dict(d),
}


def _changepoint_from_dict(d):
    mode = d.get("mode", "independent")
    if mode == "multi-output":
        return ChangePointKernel.from_pair(
            model_from_dict(d["pair"]), d["location"], d["steepness"])
    if mode == "identical":
        return ChangePointKernel.identical(
            model_from_dict(d["kernel"]), d["location"], d["steepness"])
    return ChangePointKernel(model_from_dict(d["left"]),
                             model_from_dict(d["right"]),
                             d["location"], d["steepness"], mode="independent")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(model_to_dict(model), fh, sort_keys=False)


def load_model(path):
    return model_from_dict(load_config(path))


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            out = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}")
    if not isinstance(out, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return out


def builtin_config_path(name):
    """Path of a bundled config; `name` may omit the .yaml suffix."""
    if not name.endswith(".yaml"):
        name += ".yaml"
    ref = importlib.resources.files("specmix") / "configs" / name
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return str(ref)


def resolve_config(spec):
    """Interpret `spec` as a file path or a bundled config name."""
    import os
    if os.path.exists(spec):
        return load_config(spec)
    try:
        return load_config(builtin_config_path(spec))
    except ConfigError:
        raise ConfigError(f"config {spec!r} is neither a file "
                          f"nor a bundled config name")

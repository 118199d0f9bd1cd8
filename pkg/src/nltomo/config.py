"""Experiment configuration: one JSON file drives every CLI subcommand.

The schema is versioned and validated before any solve starts. Keys:

- ``schema_version`` (required, currently 1)
- ``seed`` (int, default 0), ``output_dir`` (default "out")
- ``mesh``: {"kind": "unit_square", "n": ...} | {"kind": "disk", "radius": ...,
  "refinement": ...} | {"kind": "file", "path": ...}
- ``models``: map id -> law spec ({"kind": "linear", "sigma0": ...},
  {"kind": "monomial", "theta": ..., "p": ...}, {"kind": "polynomial",
  "coefficients": [...]}, {"kind": "tabulated", "E": [...], "J": [...],
  "p": ..., "sigma_lower": ..., "sigma_upper": ...}; all accept "E0")
- ``phantom``: {"background": id, "inclusions": [{"shape": "disk"|"rectangle"|
  "polygon", "model": id, ...geometry...}]}
- ``excitations``: {"kind": "fourier"|"bump", "count": M, ["width": w]} or
  {"kind": "coordinate", "axes": ["x", "y", ...]}
- ``solver``: tol_abs, tol_rel, max_iter, fallback
- ``quadrature``: nodes, tol, adaptive
- ``imaging``: anomaly_model, direction ("less"|"greater"), tau, noise,
  grid {"radius": r, "m": lattice size}
- ``curves``: e_max, points
- ``verify``: suite sizes (see verify.DEFAULT_SUITE_CONFIG) and "only"
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from nltomo import boundary_ops, forward
from nltomo.constitutive import ConductivityModel
from nltomo.errors import ConfigurationError
from nltomo.mesh import Inclusion, Mesh, Phantom, generate_disk, generate_unit_square, read_mesh

__all__ = [
    "SCHEMA_VERSION",
    "load_config",
    "config_digest",
    "build_mesh",
    "build_models",
    "build_phantom",
    "build_excitations",
    "build_solver_options",
    "build_quadrature_options",
]

SCHEMA_VERSION = 1

_MESH_KINDS = {"unit_square", "disk", "file"}
_MODEL_KINDS = {"linear", "monomial", "polynomial", "tabulated"}
_EXCITATION_KINDS = {"fourier", "bump", "coordinate"}


def load_config(path, seed_override=None, output_override=None) -> dict:
    """Read, default-fill and validate a configuration file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError("config root must be an object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"config must declare schema_version = {SCHEMA_VERSION} "
            f"(found {cfg.get('schema_version')!r})"
        )
    cfg.setdefault("seed", 0)
    cfg.setdefault("output_dir", "out")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if output_override is not None:
        cfg["output_dir"] = str(output_override)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Fail fast: every cross-reference and kind tag checked before any solve."""
    mesh_spec = cfg.get("mesh")
    if not isinstance(mesh_spec, dict) or mesh_spec.get("kind") not in _MESH_KINDS:
        raise ConfigurationError(f"mesh.kind must be one of {sorted(_MESH_KINDS)}")

    models = cfg.get("models")
    if not isinstance(models, dict) or not models:
        raise ConfigurationError("models must be a nonempty object")
    for mid, spec in models.items():
        if not isinstance(spec, dict) or spec.get("kind") not in _MODEL_KINDS:
            raise ConfigurationError(
                f"model {mid!r}: kind must be one of {sorted(_MODEL_KINDS)}"
            )

    phantom = cfg.get("phantom")
    if phantom is not None:
        bg = phantom.get("background")
        if bg not in models:
            raise ConfigurationError(f"phantom.background {bg!r} is not a defined model id")
        for inc in phantom.get("inclusions", []):
            if inc.get("model") not in models:
                raise ConfigurationError(
                    f"inclusion model {inc.get('model')!r} is not a defined model id"
                )

    exc = cfg.get("excitations", {"kind": "fourier", "count": 8})
    if exc.get("kind") not in _EXCITATION_KINDS:
        raise ConfigurationError(f"excitations.kind must be one of {sorted(_EXCITATION_KINDS)}")
    if exc.get("kind") in ("fourier", "bump") and int(exc.get("count", 8)) < 1:
        raise ConfigurationError("excitations.count must be positive")
    if exc.get("kind") == "coordinate":
        axes = exc.get("axes", ["x"])
        if not axes or any(a not in ("x", "y") for a in axes):
            raise ConfigurationError("coordinate excitation axes must be 'x' or 'y'")

    imaging = cfg.get("imaging")
    if imaging is not None:
        if imaging.get("anomaly_model") not in models:
            raise ConfigurationError(
                f"imaging.anomaly_model {imaging.get('anomaly_model')!r} "
                "is not a defined model id"
            )
        if imaging.get("direction", "less") not in ("less", "greater"):
            raise ConfigurationError("imaging.direction must be 'less' or 'greater'")
        if float(imaging.get("tau", 0.0)) < 0:
            raise ConfigurationError("imaging.tau must be nonnegative")
        if phantom is None:
            raise ConfigurationError("imaging requires a phantom (the synthetic truth)")

    try:
        build_models(cfg)
    except (ValueError, TypeError) as err:
        raise ConfigurationError(f"invalid model specification: {err}") from err


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def build_mesh(cfg: dict) -> Mesh:
    spec = cfg["mesh"]
    if spec["kind"] == "unit_square":
        return generate_unit_square(int(spec.get("n", 16)))
    if spec["kind"] == "disk":
        return generate_disk(float(spec.get("radius", 1.0)), int(spec.get("refinement", 8)))
    return read_mesh(spec["path"])


def build_models(cfg: dict) -> dict:
    out = {}
    for mid, spec in cfg["models"].items():
        kind = spec["kind"]
        e0 = float(spec.get("E0", 1.0))
        if kind == "linear":
            out[mid] = ConductivityModel.linear(float(spec["sigma0"]), E0=e0)
        elif kind == "monomial":
            out[mid] = ConductivityModel.monomial(
                float(spec["theta"]), float(spec["p"]), E0=e0
            )
        elif kind == "polynomial":
            out[mid] = ConductivityModel.polynomial(spec["coefficients"], E0=e0)
        else:
            out[mid] = ConductivityModel.tabulated(
                spec["E"], spec["J"], p=float(spec.get("p", 2.0)), E0=e0,
                sigma_lower=spec.get("sigma_lower"), sigma_upper=spec.get("sigma_upper"),
            )
    return out


def build_phantom(cfg: dict) -> Phantom:
    spec = cfg.get("phantom")
    if spec is None:
        mid = sorted(cfg["models"])[0]
        return Phantom(background=mid)
    inclusions = []
    for inc in spec.get("inclusions", []):
        shape = inc.get("shape")
        if shape == "disk":
            inclusions.append(Inclusion("disk", inc["model"],
                                        center=tuple(inc["center"]),
                                        radius=float(inc["radius"])))
        elif shape == "rectangle":
            inclusions.append(Inclusion("rectangle", inc["model"],
                                        bounds=tuple(inc["bounds"])))
        elif shape == "polygon":
            inclusions.append(Inclusion("polygon", inc["model"],
                                        vertices=tuple(map(tuple, inc["vertices"]))))
        else:
            raise ConfigurationError(f"unknown inclusion shape {shape!r}")
    return Phantom(background=spec["background"], inclusions=tuple(inclusions))


def build_excitations(cfg: dict, mesh: Mesh) -> list:
    spec = cfg.get("excitations", {"kind": "fourier", "count": 8})
    kind = spec["kind"]
    if kind == "fourier":
        return boundary_ops.fourier_dictionary(mesh, int(spec.get("count", 8)))
    if kind == "bump":
        width = spec.get("width")
        return boundary_ops.bump_dictionary(
            mesh, int(spec.get("count", 8)), width=None if width is None else float(width)
        )
    traces = []
    for axis in spec.get("axes", ["x"]):
        col = 0 if axis == "x" else 1
        traces.append(
            forward.project_zero_mean(mesh, mesh.nodes[mesh.boundary_nodes][:, col])
        )
    return traces


def build_solver_options(cfg: dict) -> forward.SolverOptions:
    spec = cfg.get("solver", {})
    return forward.SolverOptions(
        tol_abs=float(spec.get("tol_abs", 1e-12)),
        tol_rel=float(spec.get("tol_rel", 1e-10)),
        max_iter=int(spec.get("max_iter", 200)),
        ncg_max_iter=int(spec.get("ncg_max_iter", 2000)),
        fallback=bool(spec.get("fallback", True)),
    )


def build_quadrature_options(cfg: dict) -> boundary_ops.QuadratureOptions:
    spec = cfg.get("quadrature", {})
    return boundary_ops.QuadratureOptions(
        nodes=int(spec.get("nodes", 8)),
        tol=float(spec.get("tol", 1e-6)),
        adaptive=bool(spec.get("adaptive", False)),
        max_nodes=int(spec.get("max_nodes", 64)),
    )

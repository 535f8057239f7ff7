"""Experiment configuration, presets, and result records.

Configs are plain JSON; every block is validated against the module
preconditions before any solve starts, and the config is echoed verbatim
into every output for provenance.  Seeds are explicit and required.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .environments import CellValueTable, EnvModel, LinearEntry, PucciEntry
from .operators import (EllipticityConstants, constant_linear_operator,
                        linear_operator, pucci_operator)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _req(block, key, kind=None):
    if key not in block:
        raise ConfigError(f"missing required key {key!r}")
    val = block[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"key {key!r} has wrong type {type(val).__name__}")
    return val


def build_constants(block):
    try:
        return EllipticityConstants(lam=float(_req(block, "lam")),
                                    Lam=float(_req(block, "Lam")),
                                    gamma=float(block.get("gamma", 0.0)))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_env_model(cfg):
    env = _req(cfg, "environment", dict)
    dom = _req(cfg, "domain", dict)
    dim = int(_req(dom, "dim"))
    model = _req(env, "model", str)
    cell_size = float(env.get("cell_size", 1.0))
    spacing = float(_req(dom, "h"))
    entries_cfg = _req(env, "entries", list)
    entries = []
    for e in entries_cfg:
        if "lam" in e:
            entries.append(PucciEntry(lam=float(e["lam"]), Lam=float(e["Lam"])))
        else:
            entries.append(LinearEntry.build(e["A"], e.get("b"), e.get("c", 0.0),
                                             dim=dim))
    weights = env.get("weights")
    try:
        table = CellValueTable.build(entries, weights)
        tile = np.asarray(env["tile"]) if "tile" in env else None
        return EnvModel(dim=dim, model=model, table=table, cell_size=cell_size,
                        spacing=spacing, tile=tile)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_operator(cfg):
    op = _req(cfg, "operator", dict)
    family = _req(op, "family", str)
    constants = build_constants(_req(op, "constants", dict))
    try:
        if family == "constant":
            dom = _req(cfg, "domain", dict)
            return constant_linear_operator(op["A"], op.get("b"),
                                            op.get("c", 0.0), constants,
                                            spacing=float(dom["h"]))
        model = build_env_model(cfg)
        if family == "linear":
            return linear_operator(model, constants)
        if family == "pucci":
            return pucci_operator(model, constants, kind=op.get("kind", "+"),
                                  grad_coeff=float(op.get("grad_coeff", 0.0)))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    raise ConfigError(f"unknown operator family {family!r}")


def build_domain(cfg):
    from .lattice import make_domain
    dom = _req(cfg, "domain", dict)
    try:
        return make_domain(int(_req(dom, "dim")), _req(dom, "shape", str),
                           float(_req(dom, "r")), float(_req(dom, "h")))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_effective_params(cfg, seed_override=None):
    from .effective import EffectiveParams
    est = _req(cfg, "estimate", dict)
    dom = _req(cfg, "domain", dict)
    seed = est.get("base_seed") if seed_override is None else seed_override
    if seed is None:
        raise ConfigError("estimate.base_seed is required (no wall-clock default)")
    solver = cfg.get("solver", {})
    try:
        return EffectiveParams(
            r=float(dom["r"]), h=float(dom["h"]),
            shape=dom.get("shape", "ball"),
            window_t=float(est.get("window_t", 0.5)),
            n_samples=int(est.get("n_samples", 10)),
            base_seed=int(seed),
            theta_cut=float(est.get("theta_cut", 0.01)),
            alpha_tol=est.get("alpha_tol"),
            tol_res=solver.get("tol_res"),
            tol_contact=solver.get("tol_contact"),
            max_iter=int(solver.get("max_iter", 2_000_000)),
            bias_probe=bool(est.get("bias_probe", False)))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def estimate_args(cfg):
    est = _req(cfg, "estimate", dict)
    M = np.asarray(_req(est, "M"), dtype=float)
    p = np.asarray(est.get("p", []), dtype=float)
    dim = int(cfg["domain"]["dim"])
    if p.size == 0:
        p = np.zeros(dim)
    return M, p


def canonical_json(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def content_hash(payload):
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def make_record(command, config, outputs, wall_clock):
    payload = {"schema_version": SCHEMA_VERSION, "command": command,
               "config": config, "outputs": outputs}
    return {**payload, "wall_clock_s": wall_clock,
            "content_hash": content_hash(payload)}


# ---------------------------------------------------------------------------
# Presets: the built-in validation scenarios.

def _preset_constant_identity():
    return {
        "schema_version": SCHEMA_VERSION,
        "operator": {"family": "constant",
                     "constants": {"lam": 0.5, "Lam": 2.0, "gamma": 0.3},
                     "A": [[1.5, 0.3], [0.3, 0.8]], "b": [0.2, -0.1], "c": 0.7},
        "environment": {"model": "constant", "cell_size": 1.0,
                        "entries": [{"A": [[1.5, 0.3], [0.3, 0.8]],
                                     "b": [0.2, -0.1], "c": 0.7}]},
        "domain": {"dim": 2, "shape": "ball", "r": 8.0, "h": 0.25},
        "solver": {},
        "estimate": {"M": [[1.0, 0.0], [0.0, 1.0]], "p": [0.0, 0.0],
                     "n_samples": 2, "base_seed": 7, "window_t": 0.5},
    }


def _preset_harmonic_mean_1d():
    return {
        "schema_version": SCHEMA_VERSION,
        "operator": {"family": "linear",
                     "constants": {"lam": 1.0, "Lam": 4.0, "gamma": 0.0}},
        "environment": {"model": "checkerboard", "cell_size": 1.0,
                        "entries": [{"A": [[1.0]]}, {"A": [[4.0]]}],
                        "weights": [0.5, 0.5]},
        "domain": {"dim": 1, "shape": "ball", "r": 200.0, "h": 0.25},
        "solver": {},
        "estimate": {"M": [[1.0]], "p": [0.0], "n_samples": 20,
                     "base_seed": 1000, "window_t": 0.5,
                     "alpha_grid": [-3.5, -3.0, -2.5, -2.0, -1.8, -1.6,
                                    -1.4, -1.2]},
        "flatness": {"r_list": [50.0, 100.0, 200.0], "delta": 0.0625,
                     "alpha_below": -1.75},
        "validate": {"eps_list": [0.1, 0.05, 0.025], "forcing": 0.5,
                     "g": {"quad": [[1.0]]},
                     "effective": "oracle",
                     "oracle": {"A": [[1.6]], "b": [0.0], "c": 0.0},
                     "domain": {"dim": 1, "shape": "ball", "r": 1.0,
                                "h": 0.00625},
                     "threshold": 0.05, "require_strict": True, "seed": 3},
    }


def _preset_checkerboard_pucci_2d():
    return {
        "schema_version": SCHEMA_VERSION,
        "operator": {"family": "pucci", "kind": "+", "grad_coeff": 0.0,
                     "constants": {"lam": 1.0, "Lam": 3.0, "gamma": 0.0}},
        "environment": {"model": "checkerboard", "cell_size": 1.0,
                        "entries": [{"lam": 1.0, "Lam": 2.0},
                                    {"lam": 1.5, "Lam": 3.0}],
                        "weights": [0.5, 0.5]},
        "domain": {"dim": 2, "shape": "ball", "r": 12.0, "h": 0.5},
        "solver": {},
        "estimate": {"M": [[1.0, 0.0], [0.0, 1.0]], "p": [0.0, 0.0],
                     "n_samples": 6, "base_seed": 40, "window_t": 0.5},
        "properties": {"pairs": [[[[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]],
                                  [[[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0]]]],
                       "homogeneity_ts": [0.5, 2.0]},
    }


def _preset_periodic_linear_2d():
    return {
        "schema_version": SCHEMA_VERSION,
        "operator": {"family": "linear",
                     "constants": {"lam": 1.0, "Lam": 4.0, "gamma": 0.0}},
        "environment": {"model": "periodic", "cell_size": 1.0,
                        "entries": [{"A": [[1.0, 0.0], [0.0, 1.0]]},
                                    {"A": [[4.0, 0.0], [0.0, 4.0]]}],
                        "tile": [[0, 1], [1, 0]]},
        "domain": {"dim": 2, "shape": "ball", "r": 12.0, "h": 0.5},
        "solver": {},
        "estimate": {"M": [[1.0, 0.0], [0.0, 1.0]], "p": [0.0, 0.0],
                     "n_samples": 4, "base_seed": 77, "window_t": 0.5},
        "validate": {"eps_list": [0.25, 0.125, 0.0625], "forcing": 1.0,
                     "g": {"quad": [[1.0, 0.0], [0.0, -1.0]]},
                     "effective": "tabulated",
                     "probes": [[[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]],
                                [[[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0]],
                                [[[0.0, 0.0], [0.0, 1.0]], [0.0, 0.0]],
                                [[[0.0, 0.5], [0.5, 0.0]], [0.0, 0.0]]],
                     "domain": {"dim": 2, "shape": "cube", "r": 1.0,
                                "h": 0.015625},
                     "threshold": None, "require_strict": False, "seed": 5},
    }


def _preset_properties_suite():
    return {
        "schema_version": SCHEMA_VERSION,
        "operator": {"family": "linear",
                     "constants": {"lam": 1.0, "Lam": 4.0, "gamma": 0.5}},
        "environment": {"model": "checkerboard", "cell_size": 1.0,
                        "entries": [{"A": [[1.0]], "b": [0.5]},
                                    {"A": [[4.0]], "b": [-0.5]}],
                        "weights": [0.5, 0.5]},
        "domain": {"dim": 1, "shape": "ball", "r": 100.0, "h": 0.25},
        "solver": {},
        "estimate": {"M": [[1.0]], "p": [0.0], "n_samples": 10,
                     "base_seed": 2000, "window_t": 0.5},
        "properties": {"pairs": [
            [[[[1.0]], [0.4]], [[[0.5]], [-0.2]]],
            [[[[2.0]], [0.0]], [[[1.0]], [0.6]]],
            [[[[-1.0]], [0.3]], [[[0.5]], [0.0]]],
            [[[[1.5]], [-0.5]], [[[-0.5]], [0.2]]],
            [[[[0.8]], [0.1]], [[[2.2]], [-0.3]]]],
            "homogeneity_ts": [0.5, 2.0]},
    }


_PRESETS = {
    "constant-identity": _preset_constant_identity,
    "harmonic-mean-1d": _preset_harmonic_mean_1d,
    "checkerboard-pucci-2d": _preset_checkerboard_pucci_2d,
    "periodic-linear-2d": _preset_periodic_linear_2d,
    "properties-suite": _preset_properties_suite,
}


def preset_names():
    return sorted(_PRESETS)


def preset(name):
    if name not in _PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return _PRESETS[name]()

"""Strict JSON (de)serialization of :class:`SimConfig`.

Every object is checked against its exact key set, so a typo such as
``"epsilom"`` fails loudly with the offending key in the message.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .model import (
    BandLimitedRandom,
    Convolution,
    Custom,
    FluxFunction,
    GaussianBump,
    Grid,
    HamiltonJacobi,
    Indicator,
    Poisson,
    Prescribed,
    SimConfig,
    SourceFunction,
)

__all__ = [
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "dump_config",
    "config_hash",
    "canonical_json",
    "read_json",
    "strict_keys",
]


def strict_keys(obj: Any, where: str, required: set[str], optional: set[str] = frozenset()) -> Mapping:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"expected an object, got {type(obj).__name__}", where)
    keys = set(obj)
    unknown = keys - required - set(optional)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", f"{where}.{key}" if where else key)
    missing = required - keys
    if missing:
        key = sorted(missing)[0]
        raise ConfigError(f"missing key {key!r}", f"{where}.{key}" if where else key)
    return obj


def _num(obj: Mapping, key: str, where: str) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", f"{where}.{key}")
    return float(v)


def _int(obj: Mapping, key: str, where: str) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}", f"{where}.{key}")
    return v


def _array(obj: Mapping, key: str, where: str) -> np.ndarray:
    try:
        arr = np.asarray(obj[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a numeric array ({exc})", f"{where}.{key}") from None
    return arr


def _with_key(where: str, fn, *args):
    """Re-raise validation errors from constructors with the JSON path."""
    try:
        return fn(*args)
    except ConfigError as exc:
        key = f"{where}.{exc.key}" if exc.key else where
        raise ConfigError(exc.bare_message, key) from None


# --------------------------------------------------------------------------
# to dict
# --------------------------------------------------------------------------


def _source_to_dict(g: SourceFunction) -> dict:
    return {"coefficients": list(g.coefficients)}


def _coupling_to_dict(c) -> dict:
    if isinstance(c, Prescribed):
        return {"variant": "prescribed", "name": c.name, "params": dict(sorted(c.params.items()))}
    if isinstance(c, HamiltonJacobi):
        return {
            "variant": "hamilton_jacobi",
            "g": _source_to_dict(c.g),
            "alpha": c.alpha,
            "fp_tol": c.fp_tol,
            "fp_maxiter": int(c.fp_maxiter),
        }
    if isinstance(c, Poisson):
        return {"variant": "poisson", "g": _source_to_dict(c.g)}
    if isinstance(c, Convolution):
        return {"variant": "convolution", "components": [k.ravel().tolist() for k in c.components]}
    raise ConfigError(f"unsupported coupling {type(c).__name__}", "coupling")


def _initial_to_dict(d) -> dict:
    if isinstance(d, GaussianBump):
        return {"kind": "gaussian_bump", "center": list(d.center), "width": d.width, "amplitude": d.amplitude}
    if isinstance(d, Indicator):
        return {"kind": "indicator", "box": [list(b) for b in d.box], "amplitude": d.amplitude}
    if isinstance(d, BandLimitedRandom):
        return {"kind": "band_limited_random", "seed": d.seed, "max_mode": d.max_mode, "amplitude": d.amplitude}
    if isinstance(d, Custom):
        return {"kind": "custom", "values": d.values.ravel().tolist()}
    raise ConfigError(f"unsupported initial data {type(d).__name__}", "initial_data")


def _flux_to_dict(f: FluxFunction) -> dict:
    if f.kind == "logistic":
        return {"kind": "logistic", "n_bar": f.n_bar}
    if f.kind == "tabulated":
        return {"kind": "tabulated", "samples": f.samples.tolist()}
    return {"kind": "identity"}


def config_to_dict(config: SimConfig) -> dict:
    g = config.grid
    return {
        "grid": {"dim": g.dim, "n_per_axis": g.n_per_axis, "length": g.length},
        "flux": _flux_to_dict(config.flux),
        "coupling": _coupling_to_dict(config.coupling),
        "epsilon": config.epsilon,
        "t_final": config.t_final,
        "cfl_factor": config.cfl_factor,
        "initial_data": _initial_to_dict(config.initial_data),
        "output_every": int(config.output_every),
    }


# --------------------------------------------------------------------------
# from dict
# --------------------------------------------------------------------------


def _grid_from(obj) -> Grid:
    w = "grid"
    strict_keys(obj, w, {"dim", "n_per_axis", "length"})
    return _with_key(w, Grid, _int(obj, "dim", w), _int(obj, "n_per_axis", w), _num(obj, "length", w))


def _flux_from(obj) -> FluxFunction:
    w = "flux"
    if not isinstance(obj, Mapping) or "kind" not in obj:
        raise ConfigError("missing key 'kind'", f"{w}.kind")
    kind = obj["kind"]
    if kind == "identity":
        strict_keys(obj, w, {"kind"})
        return FluxFunction("identity")
    if kind == "logistic":
        strict_keys(obj, w, {"kind", "n_bar"})
        return _with_key(w, FluxFunction, "logistic", _num(obj, "n_bar", w))
    if kind == "tabulated":
        strict_keys(obj, w, {"kind", "samples"})
        return _with_key(w, FluxFunction, "tabulated", None, _array(obj, "samples", w))
    raise ConfigError(f"unknown flux kind {kind!r}", f"{w}.kind")


def _source_from(obj, where: str) -> SourceFunction:
    strict_keys(obj, where, {"coefficients"})
    return _with_key(where, SourceFunction, tuple(_array(obj, "coefficients", where).ravel()))


def _coupling_from(obj):
    w = "coupling"
    if not isinstance(obj, Mapping) or "variant" not in obj:
        raise ConfigError("missing key 'variant'", f"{w}.variant")
    v = obj["variant"]
    if v == "prescribed":
        strict_keys(obj, w, {"variant", "name"}, {"params"})
        params = obj.get("params", {})
        if not isinstance(params, Mapping):
            raise ConfigError("expected an object", f"{w}.params")
        parsed = {}
        for k in params:
            parsed[k] = _num(params, k, f"{w}.params")
        return Prescribed(str(obj["name"]), parsed)
    if v == "poisson":
        strict_keys(obj, w, {"variant"}, {"g"})
        g = _source_from(obj["g"], f"{w}.g") if "g" in obj else SourceFunction.identity()
        return Poisson(g)
    if v == "hamilton_jacobi":
        strict_keys(obj, w, {"variant", "alpha"}, {"g", "fp_tol", "fp_maxiter"})
        g = _source_from(obj["g"], f"{w}.g") if "g" in obj else SourceFunction.identity()
        kw = {"alpha": _num(obj, "alpha", w)}
        if "fp_tol" in obj:
            kw["fp_tol"] = _num(obj, "fp_tol", w)
        if "fp_maxiter" in obj:
            kw["fp_maxiter"] = _int(obj, "fp_maxiter", w)
        return _with_key(w, lambda: HamiltonJacobi(g, **kw))
    if v == "convolution":
        strict_keys(obj, w, {"variant", "components"})
        comps = obj["components"]
        if not isinstance(comps, list):
            raise ConfigError("expected a list of arrays", f"{w}.components")
        return Convolution(tuple(_array({"c": c}, "c", f"{w}.components") for c in comps))
    raise ConfigError(f"unknown coupling variant {v!r}", f"{w}.variant")


def _initial_from(obj):
    w = "initial_data"
    if not isinstance(obj, Mapping) or "kind" not in obj:
        raise ConfigError("missing key 'kind'", f"{w}.kind")
    kind = obj["kind"]
    if kind == "gaussian_bump":
        strict_keys(obj, w, {"kind", "center"}, {"width", "amplitude"})
        kw = {k: _num(obj, k, w) for k in ("width", "amplitude") if k in obj}
        return GaussianBump(tuple(_array(obj, "center", w).ravel()), **kw)
    if kind == "indicator":
        strict_keys(obj, w, {"kind", "box"}, {"amplitude"})
        box = _array(obj, "box", w)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ConfigError("expected a list of [lo, hi] pairs", f"{w}.box")
        kw = {"amplitude": _num(obj, "amplitude", w)} if "amplitude" in obj else {}
        return Indicator(tuple((float(a), float(b)) for a, b in box), **kw)
    if kind == "band_limited_random":
        strict_keys(obj, w, {"kind", "seed"}, {"max_mode", "amplitude"})
        kw = {}
        if "max_mode" in obj:
            kw["max_mode"] = _int(obj, "max_mode", w)
        if "amplitude" in obj:
            kw["amplitude"] = _num(obj, "amplitude", w)
        return BandLimitedRandom(_int(obj, "seed", w), **kw)
    if kind == "custom":
        strict_keys(obj, w, {"kind", "values"})
        return Custom(_array(obj, "values", w))
    raise ConfigError(f"unknown initial data kind {kind!r}", f"{w}.kind")


CONFIG_KEYS = {"grid", "flux", "coupling", "epsilon", "t_final", "cfl_factor", "initial_data"}


def config_from_dict(obj: Any) -> SimConfig:
    strict_keys(obj, "", CONFIG_KEYS, {"output_every"})
    grid = _grid_from(obj["grid"])
    flux = _flux_from(obj["flux"])
    coupling = _coupling_from(obj["coupling"])
    init = _initial_from(obj["initial_data"])
    kw = {"output_every": _int(obj, "output_every", "")} if "output_every" in obj else {}
    return _with_key(
        "",
        lambda: SimConfig(
            grid,
            flux,
            coupling,
            _num(obj, "epsilon", ""),
            _num(obj, "t_final", ""),
            _num(obj, "cfl_factor", ""),
            init,
            **kw,
        ),
    )


def read_json(path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc.msg} at line {exc.lineno} column {exc.colno}") from None


def load_config(path) -> SimConfig:
    return config_from_dict(read_json(path))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dump_config(config: SimConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")


def config_hash(config: SimConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    return hashlib.sha256(canonical_json(config_to_dict(config)).encode()).hexdigest()

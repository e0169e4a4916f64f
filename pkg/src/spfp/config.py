"""Strict run configuration: a flat JSON object validated before any allocation.

Recognized keys (``preset`` is the only required one)::

    preset          OPINION | PROTOTYPE | SWARM1D | SWARM2D | WEALTH
    params          object of preset parameters (see ``spfp list-presets``);
                    the dotted form ``"params.sigma2": 0.3`` is accepted too
    n_cells         resolution, overrides ``params.n_cells``
    flux_family     SP_CC | SP_EA | SP_CC_EXACT | CENTRAL
    quadrature      MIDPOINT | OPEN_NC4 | OPEN_NC6 | GAUSS6
    integrator      EULER | SSP2 | RK4 | SEMI_IMPLICIT_1 | IMEX2 | FULLY_IMPLICIT
    dt_policy       fixed | cfl_explicit | cfl_semi_implicit | power
    dt, dt_safety, dt_max, dt_scale, dt_power
    t_final         final time of a run
    output_times    snapshot times
    output_dir      artifact directory (``--out`` overrides it)
    cadence         diagnostics every ``cadence`` steps, plus the final step
    strict          demand strict diagonal dominance of implicit systems
    mode            single | convergence | phase_transition
    n_list, reference_n, quadratures, dt_grid, workers     convergence mode
    D_list, t_max, tol, alpha                               phase_transition mode
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .core import DtPolicy, FluxFamily, Integrator
from .errors import ConfigError, InvalidArgumentError
from .models import PRESETS
from .quadrature import RuleKind

REQUIRED = ("preset",)
MODES = ("single", "convergence", "phase_transition")
DT_POLICIES = ("fixed", "cfl_explicit", "cfl_semi_implicit", "power")


@dataclass(frozen=True)
class RunConfig:
    preset: str
    params: dict = field(default_factory=dict)
    n_cells: Optional[int] = None
    flux_family: str = "SP_CC"
    quadrature: str = "GAUSS6"
    integrator: str = "EULER"
    dt_policy: str = "cfl_explicit"
    dt: Optional[float] = None
    dt_safety: float = 0.99
    dt_max: Optional[float] = None
    dt_scale: float = 1.0
    dt_power: float = 1.0
    t_final: float = 1.0
    output_times: tuple = ()
    output_dir: str = "out"
    cadence: int = 10
    strict: bool = False
    mode: str = "single"
    n_list: tuple = (40, 80)
    reference_n: int = 640
    quadratures: tuple = ("GAUSS6",)
    dt_grid: str = "own"
    workers: int = 1
    D_list: tuple = (0.1, 0.3, 0.5)
    t_max: float = 200.0
    tol: float = 1e-8
    alpha: Optional[float] = None

    def preset_params(self) -> dict:
        """Preset defaults merged with the configured parameters."""
        p = dict(PRESETS[self.preset].defaults)
        p.update(self.params)
        if self.n_cells is not None:
            p["n_cells"] = self.n_cells
        return p

    def dt_policy_obj(self) -> DtPolicy:
        return DtPolicy(self.dt_policy, dt=self.dt, safety=self.dt_safety, dt_max=self.dt_max,
                        scale=self.dt_scale, power=self.dt_power)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


_FIELDS = {f for f in RunConfig.__dataclass_fields__}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _num(doc, key, positive=False, nonneg=False, integer=False, allow_none=False):
    v = doc[key]
    if v is None and allow_none:
        return None
    if not _is_number(v) or (integer and int(v) != v):
        raise ConfigError(f"expected {'an integer' if integer else 'a number'}, got {v!r}", key)
    v = int(v) if integer else float(v)
    if positive and not v > 0:
        raise ConfigError(f"must be positive, got {v}", key)
    if nonneg and v < 0:
        raise ConfigError(f"must be nonnegative, got {v}", key)
    return v


def _choice(doc, key, options):
    v = doc[key]
    if not isinstance(v, str) or v.upper() not in {o.upper() for o in options}:
        raise ConfigError(f"expected one of {list(options)}, got {v!r}", key)
    return next(o for o in options if o.upper() == v.upper())


def _num_list(doc, key, positive=True, integer=False):
    v = doc[key]
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a non-empty list", key)
    out = []
    for k, item in enumerate(v):
        out.append(_num({f"{key}[{k}]": item}, f"{key}[{k}]", positive=positive,
                        integer=integer))
    return tuple(out)


def _check_params(preset: str, params: dict) -> dict:
    defaults = PRESETS[preset].defaults
    out = {}
    for name, v in params.items():
        path = f"params.{name}"
        if name not in defaults:
            raise ConfigError(f"unknown parameter for {preset}; known: {sorted(defaults)}", path)
        ref = defaults[name]
        if isinstance(ref, str):
            if not isinstance(v, str):
                raise ConfigError(f"expected a string, got {v!r}", path)
            out[name] = v
        elif v is None:
            out[name] = None
        elif not _is_number(v):
            raise ConfigError(f"expected a number, got {v!r}", path)
        elif isinstance(ref, int) and not isinstance(ref, bool):
            if int(v) != v or v < 2:
                raise ConfigError(f"expected an integer >= 2, got {v!r}", path)
            out[name] = int(v)
        else:
            out[name] = float(v)
    _check_param_ranges(preset, dict(defaults, **out))
    return out


def _check_param_ranges(preset: str, p: dict) -> None:
    def need(cond, name, what):
        if not cond:
            raise ConfigError(f"{what}, got {p[name]!r}", f"params.{name}")

    for name in ("sigma2", "L", "c", "init_var"):
        if name in p:
            need(p[name] > 0, name, "must be positive")
    if "D" in p:
        need(p["D"] >= 0, "D", "must be nonnegative")
    if "alpha" in p:
        need(p["alpha"] >= 0, "alpha", "must be nonnegative")
    if preset == "OPINION":
        need(p["kernel"] in ("CONSTANT", "BOUNDED_CONFIDENCE"), "kernel",
             "must be CONSTANT or BOUNDED_CONFIDENCE")
        if p["kernel"] == "BOUNDED_CONFIDENCE":
            need(p["confidence"] is not None and p["confidence"] > 0, "confidence",
                 "bounded confidence needs a positive radius")
        if p["u"] is not None:
            need(-1 < p["u"] < 1, "u", "must lie in (-1, 1)")
    if preset == "PROTOTYPE":
        need(-1 < p["u"] < 1, "u", "must lie in (-1, 1)")
    if preset == "WEALTH":
        need(p["ghost"] in ("consistent", "printed", "none"), "ghost",
             "must be consistent, printed or none")
        need(p["mean_closure"] in ("conserved", "dynamic"), "mean_closure",
             "must be conserved or dynamic")
        need(0 < p["u"] < p["L"], "u", "must lie inside (0, L)")


def _gather(doc: dict) -> dict:
    """Fold dotted ``params.x`` keys into the ``params`` object."""
    out = {}
    params = {}
    for key, v in doc.items():
        if not isinstance(key, str):
            raise ConfigError("keys must be strings", repr(key))
        if key.startswith("params."):
            params[key[len("params."):]] = v
        elif key == "params":
            if not isinstance(v, dict):
                raise ConfigError("expected an object", "params")
            params.update(v)
        else:
            out[key] = v
    if params:
        out["params"] = params
    return out


def validate(doc: dict) -> RunConfig:
    """Validate a decoded document; every error names the key path at fault."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    doc = _gather(doc)
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    unknown = sorted(set(doc) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown key (known: {sorted(_FIELDS)})", unknown[0])
    kw = {}
    kw["preset"] = _choice(doc, "preset", list(PRESETS))
    if "params" in doc:
        kw["params"] = _check_params(kw["preset"], doc["params"])
    for key, opts in (("flux_family", [f.value for f in FluxFamily]),
                      ("quadrature", [r.value for r in RuleKind]),
                      ("integrator", [i.value for i in Integrator]),
                      ("dt_policy", DT_POLICIES), ("mode", MODES),
                      ("dt_grid", ("own", "reference"))):
        if key in doc:
            kw[key] = _choice(doc, key, opts)
    for key in ("t_final", "dt_safety", "dt_scale", "t_max", "tol"):
        if key in doc:
            kw[key] = _num(doc, key, positive=True)
    for key in ("dt", "dt_max"):
        if key in doc:
            kw[key] = _num(doc, key, positive=True, allow_none=True)
    if "dt_power" in doc:
        kw["dt_power"] = _num(doc, "dt_power")
    if "alpha" in doc:
        kw["alpha"] = _num(doc, "alpha", nonneg=True, allow_none=True)
    for key in ("cadence", "workers", "reference_n"):
        if key in doc:
            kw[key] = _num(doc, key, positive=True, integer=True)
    if "n_cells" in doc:
        kw["n_cells"] = _num(doc, "n_cells", integer=True, allow_none=True)
        if kw["n_cells"] is not None and kw["n_cells"] < 2:
            raise ConfigError("needs at least 2 cells", "n_cells")
    if "output_times" in doc:
        v = doc["output_times"]
        kw["output_times"] = () if v == [] else _num_list(doc, "output_times")
    if "n_list" in doc:
        kw["n_list"] = _num_list(doc, "n_list", integer=True)
    if "D_list" in doc:
        kw["D_list"] = _num_list(doc, "D_list", positive=False)
        if any(d < 0 for d in kw["D_list"]):
            raise ConfigError("diffusion values must be nonnegative", "D_list")
    if "quadratures" in doc:
        v = doc["quadratures"]
        if not isinstance(v, list) or not v:
            raise ConfigError("expected a non-empty list", "quadratures")
        kw["quadratures"] = tuple(_choice({f"quadratures[{k}]": q}, f"quadratures[{k}]",
                                          [r.value for r in RuleKind]) for k, q in enumerate(v))
    for key in ("output_dir",):
        if key in doc:
            if not isinstance(doc[key], str) or not doc[key]:
                raise ConfigError("expected a non-empty string", key)
            kw[key] = doc[key]
    if "strict" in doc:
        if not isinstance(doc["strict"], bool):
            raise ConfigError("expected true or false", "strict")
        kw["strict"] = doc["strict"]
    cfg = RunConfig(**kw)
    _cross_checks(cfg)
    return cfg


def _cross_checks(cfg: RunConfig) -> None:
    if cfg.dt_policy == "fixed" and cfg.dt is None:
        raise ConfigError("the fixed policy needs a step", "dt")
    if cfg.dt_safety > 1.0:
        raise ConfigError("must not exceed 1", "dt_safety")
    if any(t > cfg.t_final for t in cfg.output_times) and cfg.mode != "phase_transition":
        raise ConfigError("snapshot times must not exceed t_final", "output_times")
    if cfg.flux_family == "SP_CC_EXACT" and cfg.preset == "SWARM2D":
        raise ConfigError("exact weights are not available in 2D", "flux_family")
    if cfg.mode == "convergence":
        if cfg.preset == "SWARM2D":
            raise ConfigError("convergence mode needs a 1D preset", "mode")
        if any(cfg.reference_n % n for n in cfg.n_list):
            raise ConfigError("must be a multiple of every entry of n_list", "reference_n")
    if cfg.mode == "phase_transition" and cfg.preset != "SWARM2D":
        raise ConfigError("phase_transition mode needs the SWARM2D preset", "mode")
    try:
        cfg.dt_policy_obj()
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), "dt_policy") from None


def _load(text: str):
    if not text.strip():
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON configuration; blank text counts as ``{}``."""
    return validate(_load(text))


def parse_override(item: str):
    """``key=value`` with ``value`` read as JSON, or as a bare string if that fails."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(text: str, overrides) -> RunConfig:
    doc = _load(text)
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    for item in overrides:
        key, value = parse_override(item)
        if key.startswith("params.") and isinstance(doc.get("params"), dict):
            doc["params"][key[len("params."):]] = value
        else:
            doc[key] = value
    return validate(doc)

"""Experiment configuration: flat `key = value` text with dotted sections.

The format is deliberately trivial: UTF-8 lines, `#` comments, one dotted key
per line.  Unknown keys are rejected so typos surface as config errors rather
than silently ignored physics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .flow import DuhamelParams, FlowConfig
from .grid import DerivativeBackend, GridSpec

_KNOWN_KEYS = {
    "grid.n",
    "grid.resolution",
    "grid.box_length",
    "backend.kind",
    "backend.dealias",
    "flow.scheme",
    "flow.dt_policy",
    "flow.dt",
    "flow.cfl_safety",
    "flow.t_end",
    "flow.stepper",
    "flow.duhamel.window",
    "flow.duhamel.slices",
    "flow.duhamel.max_iters",
    "flow.duhamel.tol",
    "init.kind",
    "init.amplitude",
    "init.width",
    "init.pattern",
    "init.phi_amplitude",
    "init.mass",
    "init.core",
    "init.truncate",
    "init.kmax",
    "init.seed",
    "diag.p",
    "diag.p_list",
    "diag.record_every",
    "diag.curvature",
    "diag.local_mass_radii",
    "diag.local_mass_p",
    "diag.adm_radii",
    "diag.xt_radii",
    "diag.fit_t_min",
    "diag.fit_t_max",
    "harnack.enabled",
    "harnack.t0",
    "harnack.probes",
    "harnack.p",
    "output.dir",
    "output.snapshot_every",
    "output.csv_every",
    "output.store_every",
}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _get(raw, key, default=None, required=False):
    if key in raw:
        return raw[key]
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def _as_int(key, value):
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r}: expected integer, got {value!r}") from exc


def _as_float(key, value):
    try:
        out = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r}: expected number, got {value!r}") from exc
    return out


def _as_bool(key, value):
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("true", "1", "yes", "on"):
        return True
    if str(value).lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected boolean, got {value!r}")


def _as_float_list(key, value):
    if value is None or str(value).strip() == "":
        return ()
    try:
        return tuple(float(tok) for tok in str(value).split(","))
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected comma-separated numbers") from exc


@dataclass
class ExperimentConfig:
    grid: GridSpec
    backend: DerivativeBackend
    flow: FlowConfig
    init_kind: str
    init_params: dict
    p: float
    p_list: tuple
    record_every: int
    curvature: bool
    local_mass_radii: tuple
    local_mass_p: float
    adm_radii: tuple
    xt_radii: tuple
    fit_window: tuple | None
    harnack_enabled: bool
    harnack_t0: float
    harnack_probes: int
    harnack_p: float
    out_dir: str
    snapshot_every: int
    csv_every: int
    store_every: int
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "ExperimentConfig":
        raw = parse_config_text(text)
        if overrides:
            raw.update(overrides)
        return cls.from_raw(raw)

    @classmethod
    def from_raw(cls, raw: dict) -> "ExperimentConfig":
        try:
            grid = GridSpec(
                n=_as_int("grid.n", _get(raw, "grid.n", required=True)),
                resolution=_as_int("grid.resolution", _get(raw, "grid.resolution", required=True)),
                box_length=_as_float("grid.box_length", _get(raw, "grid.box_length", required=True)),
            )
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc

        try:
            backend = DerivativeBackend(
                kind=_get(raw, "backend.kind", "spectral"),
                dealias=_as_bool("backend.dealias", _get(raw, "backend.dealias", "true")),
            )
        except ValueError as exc:
            raise ConfigError(f"backend: {exc}") from exc

        try:
            flow = FlowConfig(
                scheme=_get(raw, "flow.scheme", "imex"),
                dt_policy=_get(raw, "flow.dt_policy", "fixed"),
                dt=_as_float("flow.dt", _get(raw, "flow.dt", "1e-3")),
                cfl_safety=_as_float("flow.cfl_safety", _get(raw, "flow.cfl_safety", "0.5")),
                t_end=_as_float("flow.t_end", _get(raw, "flow.t_end", required=True)),
                stepper=_get(raw, "flow.stepper", "exp_euler"),
                duhamel=DuhamelParams(
                    window=_as_float("flow.duhamel.window", _get(raw, "flow.duhamel.window", "0")),
                    slices=_as_int("flow.duhamel.slices", _get(raw, "flow.duhamel.slices", "16")),
                    max_iters=_as_int("flow.duhamel.max_iters", _get(raw, "flow.duhamel.max_iters", "10")),
                    tol=_as_float("flow.duhamel.tol", _get(raw, "flow.duhamel.tol", "1e-10")),
                ),
                backend=backend,
            )
        except ValueError as exc:
            raise ConfigError(f"flow: {exc}") from exc

        init_kind = _get(raw, "init.kind", "zero")
        init_params = {}
        if "init.amplitude" in raw:
            init_params["amplitude"] = _as_float("init.amplitude", raw["init.amplitude"])
        if "init.width" in raw:
            init_params["width"] = _as_float("init.width", raw["init.width"])
        if "init.pattern" in raw:
            init_params["pattern"] = raw["init.pattern"]
        if "init.phi_amplitude" in raw:
            init_params["phi_amplitude"] = _as_float("init.phi_amplitude", raw["init.phi_amplitude"])
        if "init.mass" in raw:
            init_params["mass"] = _as_float("init.mass", raw["init.mass"])
        if "init.core" in raw:
            init_params["core"] = _as_float("init.core", raw["init.core"])
        if "init.truncate" in raw:
            init_params["truncate"] = _as_bool("init.truncate", raw["init.truncate"])
        if "init.kmax" in raw:
            init_params["kmax"] = _as_int("init.kmax", raw["init.kmax"])
        if "init.seed" in raw:
            init_params["seed"] = _as_int("init.seed", raw["init.seed"])
        if init_kind == "random_bandlimited" and "seed" not in init_params:
            raise ConfigError("init.seed is required for randomized initial data")

        p = _as_float("diag.p", _get(raw, "diag.p", "1"))
        p_list = _as_float_list("diag.p_list", _get(raw, "diag.p_list", "1,2"))
        local_mass_radii = _as_float_list(
            "diag.local_mass_radii", _get(raw, "diag.local_mass_radii", "")
        )
        adm_radii = _as_float_list("diag.adm_radii", _get(raw, "diag.adm_radii", ""))
        xt_radii = _as_float_list("diag.xt_radii", _get(raw, "diag.xt_radii", ""))
        for key, radii in (
            ("diag.local_mass_radii", local_mass_radii),
            ("diag.adm_radii", adm_radii),
            ("diag.xt_radii", xt_radii),
        ):
            for r in radii:
                if not 0 < r < grid.box_length / 4.0:
                    raise ConfigError(
                        f"key {key!r}: radius {r} must lie in (0, box_length/4)"
                    )

        fit_window = None
        if "diag.fit_t_min" in raw or "diag.fit_t_max" in raw:
            fit_window = (
                _as_float("diag.fit_t_min", _get(raw, "diag.fit_t_min", "0")),
                _as_float("diag.fit_t_max", _get(raw, "diag.fit_t_max", str(flow.t_end))),
            )

        cfg = cls(
            grid=grid,
            backend=backend,
            flow=flow,
            init_kind=init_kind,
            init_params=init_params,
            p=p,
            p_list=p_list,
            record_every=_as_int("diag.record_every", _get(raw, "diag.record_every", "1")),
            curvature=_as_bool("diag.curvature", _get(raw, "diag.curvature", "false")),
            local_mass_radii=local_mass_radii,
            local_mass_p=_as_float("diag.local_mass_p", _get(raw, "diag.local_mass_p", "2")),
            adm_radii=adm_radii,
            xt_radii=xt_radii,
            fit_window=fit_window,
            harnack_enabled=_as_bool("harnack.enabled", _get(raw, "harnack.enabled", "false")),
            harnack_t0=_as_float("harnack.t0", _get(raw, "harnack.t0", "0")),
            harnack_probes=_as_int("harnack.probes", _get(raw, "harnack.probes", "20")),
            harnack_p=_as_float("harnack.p", _get(raw, "harnack.p", str(p))),
            out_dir=_get(raw, "output.dir", "out"),
            snapshot_every=_as_int("output.snapshot_every", _get(raw, "output.snapshot_every", "0")),
            csv_every=_as_int("output.csv_every", _get(raw, "output.csv_every", "1")),
            store_every=_as_int("output.store_every", _get(raw, "output.store_every", "1")),
            raw=dict(raw),
        )
        if cfg.record_every < 1 or cfg.csv_every < 1 or cfg.store_every < 1:
            raise ConfigError("strides must be positive integers")
        if cfg.p < 1:
            raise ConfigError("diag.p must be >= 1")
        return cfg

    def echo_lines(self) -> list:
        return [f"{k} = {self.raw[k]}" for k in sorted(self.raw)]

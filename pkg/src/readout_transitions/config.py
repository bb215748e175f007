"""JSON run configuration.

All frequencies in the file are ordinary frequencies in Hz (omega / 2pi);
the builders convert to angular units. Validation failures raise
:class:`ConfigError` carrying the dotted path of the offending field.

Grids are given either as an explicit list or as
``{"start": a, "stop": b, "num": n}`` (inclusive linspace); they are stored
as tuples, so ``parse -> serialize -> parse`` is the identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .constants import TWO_PI
from .environment import (
    EnvironmentModel,
    LumpedCircuit,
    MixingFeature,
    ReadoutChannel,
    SpuriousMode,
    TLSDefect,
    eta_from_chi,
)
from .spectrum import FluxTunableTransmon, TransmonParams, ej_for_transition_frequency, flux_for_ej


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_MISSING = object()


def _take(d, key, path, kind=float, default=_MISSING):
    p = f"{path}.{key}" if path else key
    if key not in d or d[key] is None:
        if default is _MISSING:
            raise ConfigError(p, "required field missing")
        return default
    v = d[key]
    try:
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        if kind is int:
            if isinstance(v, bool) or int(v) != v:
                raise TypeError
            return int(v)
        if kind is float:
            if isinstance(v, bool):
                raise TypeError
            v = float(v)
            if not math.isfinite(v):
                raise ValueError
            return v
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(p, f"expected {kind.__name__}, got {v!r}") from None


def _grid(d, key, path, default=_MISSING, allow_empty=False):
    p = f"{path}.{key}"
    if key not in d or d[key] is None:
        if default is _MISSING:
            raise ConfigError(p, "required field missing")
        return default
    v = d[key]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if isinstance(v, dict):
        _check_keys(v, {"start", "stop", "num"}, p)
        num = _take(v, "num", p, int)
        if num < 0:
            raise ConfigError(p + ".num", "must be >= 0")
        vals = tuple(float(x) for x in np.linspace(_take(v, "start", p), _take(v, "stop", p), num))
    elif isinstance(v, list):
        try:
            vals = tuple(float(x) for x in v)
        except (TypeError, ValueError):
            raise ConfigError(p, "grid entries must be numbers") from None
    else:
        raise ConfigError(p, "grid must be a list or {start, stop, num}")
    if not vals and not allow_empty:
        raise ConfigError(p, "grid must not be empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(p, "grid must be strictly increasing")
    return vals


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(path or "<root>", "expected an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _positive(value, path):
    if value is not None and not value > 0:
        raise ConfigError(path, "must be positive")


def _clean(obj):
    """Dataclass -> JSON-ready dict, dropping ``None`` values."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# ------------------------------------------------------------------ sections


@dataclass(frozen=True)
class DeviceConfig:
    """Working point plus the flux-tuning model.

    Exactly one of ``e_j_hz`` and ``omega_q_hz`` fixes the working point.
    The sweet-spot device is given by ``omega_q_max_hz`` or ``e_j_max_hz``
    (defaults to the working point itself).
    """

    e_c_hz: float
    e_j_hz: float | None = None
    omega_q_hz: float | None = None
    omega_q_max_hz: float | None = None
    e_j_max_hz: float | None = None
    asymmetry: float = 0.0
    n_cut: int = 40
    n_levels: int = 12
    flux: tuple[float, ...] | None = None

    @classmethod
    def from_dict(cls, d, path="device"):
        _check_keys(d, {f.name for f in fields(cls)}, path)
        c = cls(
            e_c_hz=_take(d, "e_c_hz", path),
            e_j_hz=_take(d, "e_j_hz", path, default=None),
            omega_q_hz=_take(d, "omega_q_hz", path, default=None),
            omega_q_max_hz=_take(d, "omega_q_max_hz", path, default=None),
            e_j_max_hz=_take(d, "e_j_max_hz", path, default=None),
            asymmetry=_take(d, "asymmetry", path, default=0.0),
            n_cut=_take(d, "n_cut", path, int, default=40),
            n_levels=_take(d, "n_levels", path, int, default=12),
            flux=_grid(d, "flux", path, default=None),
        )
        if (c.e_j_hz is None) == (c.omega_q_hz is None):
            raise ConfigError(f"{path}.e_j_hz", "give exactly one of e_j_hz and omega_q_hz")
        if c.omega_q_max_hz is not None and c.e_j_max_hz is not None:
            raise ConfigError(f"{path}.omega_q_max_hz", "give at most one of omega_q_max_hz and e_j_max_hz")
        for k in ("e_c_hz", "e_j_hz", "omega_q_hz", "omega_q_max_hz", "e_j_max_hz"):
            _positive(getattr(c, k), f"{path}.{k}")
        if not 0 <= c.asymmetry < 1:
            raise ConfigError(f"{path}.asymmetry", "must lie in [0, 1)")
        if c.n_levels < 2:
            raise ConfigError(f"{path}.n_levels", "must be >= 2")
        if c.n_cut < c.n_levels + 10:
            raise ConfigError(f"{path}.n_cut", "must be >= n_levels + 10")
        return c

    def to_dict(self):
        return _clean(asdict(self))

    @property
    def e_c(self) -> float:
        return TWO_PI * self.e_c_hz

    def transmon(self) -> TransmonParams:
        if self.e_j_hz is not None:
            return TransmonParams(self.e_c, TWO_PI * self.e_j_hz)
        return TransmonParams.from_qubit_frequency(self.e_c, TWO_PI * self.omega_q_hz, n_cut=self.n_cut)

    def tunable(self) -> FluxTunableTransmon:
        if self.e_j_max_hz is not None:
            e_j_max = TWO_PI * self.e_j_max_hz
        elif self.omega_q_max_hz is not None:
            e_j_max = ej_for_transition_frequency(self.e_c, TWO_PI * self.omega_q_max_hz, n_cut=self.n_cut)
        else:
            e_j_max = self.transmon().e_j
        return FluxTunableTransmon(self.e_c, e_j_max, self.asymmetry, self.n_cut)

    def working_flux(self) -> float:
        dev = self.tunable()
        try:
            return flux_for_ej(dev.e_j_max, self.transmon().e_j, dev.asymmetry)
        except ValueError:
            raise ConfigError("device", "working point lies outside the flux tuning range") from None


@dataclass(frozen=True)
class CircuitConfig:
    c_q: float
    c_c: float
    c_res: float
    l_res: float
    l_tr: float
    r: float = 50.0

    @classmethod
    def from_dict(cls, d, path):
        _check_keys(d, {f.name for f in fields(cls)}, path)
        kw = {f.name: _take(d, f.name, path, default=f.default if f.name == "r" else _MISSING) for f in fields(cls)}
        c = cls(**kw)
        try:
            c.build()
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
        return c

    def build(self) -> LumpedCircuit:
        return LumpedCircuit(**asdict(self))


@dataclass(frozen=True)
class EnvironmentConfig:
    omega_res_hz: float | None = None
    kappa_hz: float | None = None
    eta: float | None = None
    chi_hz: float | None = None
    circuit: CircuitConfig | None = None
    spurious: tuple[dict, ...] = ()
    tls: tuple[dict, ...] = ()
    mixing: tuple[dict, ...] = ()
    peak_exclusion: float = 100.0

    @classmethod
    def from_dict(cls, d, path="environment"):
        _check_keys(d, {f.name for f in fields(cls)}, path)
        circuit = None
        if d.get("circuit") is not None:
            circuit = CircuitConfig.from_dict(d["circuit"], f"{path}.circuit")
        c = cls(
            omega_res_hz=_take(d, "omega_res_hz", path, default=None),
            kappa_hz=_take(d, "kappa_hz", path, default=None),
            eta=_take(d, "eta", path, default=None),
            chi_hz=_take(d, "chi_hz", path, default=None),
            circuit=circuit,
            spurious=_records(d, "spurious", path, ("omega_s_hz", "kappa_s_hz", "g_s_hz")),
            tls=_records(d, "tls", path, ("omega_tls_hz", "gamma_peak", "width_hz")),
            mixing=_records(
                d, "mixing", path, ("omega_s_hz", "amplitude", "width_hz"),
                optional={"initial": 1, "final": 3, "n_photons": 3},
            ),
            peak_exclusion=_take(d, "peak_exclusion", path, default=100.0),
        )
        has_channel = c.omega_res_hz is not None or c.kappa_hz is not None
        if has_channel:
            if c.omega_res_hz is None or c.kappa_hz is None:
                raise ConfigError(f"{path}.kappa_hz", "omega_res_hz and kappa_hz go together")
            if (c.eta is None) == (c.chi_hz is None):
                raise ConfigError(f"{path}.eta", "give exactly one of eta and chi_hz")
            _positive(c.omega_res_hz, f"{path}.omega_res_hz")
            _positive(c.kappa_hz, f"{path}.kappa_hz")
            if c.eta is not None and not 0 < c.eta < 1:
                raise ConfigError(f"{path}.eta", "must lie in (0, 1)")
        elif circuit is None:
            raise ConfigError(path, "need channel parameters (omega_res_hz, kappa_hz, eta|chi_hz) or a circuit")
        if c.peak_exclusion < 0:
            raise ConfigError(f"{path}.peak_exclusion", "must be >= 0")
        for k, rec in enumerate(c.spurious):
            try:
                SpuriousMode(*(TWO_PI * rec[x] for x in ("omega_s_hz", "kappa_s_hz", "g_s_hz")))
            except ValueError as exc:
                raise ConfigError(f"{path}.spurious[{k}]", str(exc)) from None
        return c

    def to_dict(self):
        out = _clean(asdict(self))
        return out

    def build(self, e_c: float, omega_q: float) -> EnvironmentModel:
        """Environment in angular units; ``chi`` is turned into ``eta`` at ``omega_q``."""
        channel = None
        if self.omega_res_hz is not None:
            w_res = TWO_PI * self.omega_res_hz
            kappa = TWO_PI * self.kappa_hz
            if self.eta is not None:
                eta, chi = self.eta, None
            else:
                chi = TWO_PI * self.chi_hz
                try:
                    eta = eta_from_chi(chi, e_c, omega_q, w_res)
                except ValueError as exc:
                    raise ConfigError("environment.chi_hz", str(exc)) from None
            channel = ReadoutChannel(w_res, kappa, eta, chi)
        return EnvironmentModel(
            channel=channel,
            circuit=self.circuit.build() if self.circuit else None,
            spurious=tuple(
                SpuriousMode(TWO_PI * s["omega_s_hz"], TWO_PI * s["kappa_s_hz"], TWO_PI * s["g_s_hz"])
                for s in self.spurious
            ),
            tls=tuple(TLSDefect(TWO_PI * t["omega_tls_hz"], t["gamma_peak"], TWO_PI * t["width_hz"]) for t in self.tls),
            mixing=tuple(
                MixingFeature(
                    TWO_PI * x["omega_s_hz"], x["amplitude"], TWO_PI * x["width_hz"],
                    int(x["initial"]), int(x["final"]), int(x["n_photons"]),
                )
                for x in self.mixing
            ),
            peak_exclusion=self.peak_exclusion,
        )


def _records(d, key, path, required, optional=None):
    optional = optional or {}
    items = d.get(key) or []
    if not isinstance(items, list):
        raise ConfigError(f"{path}.{key}", "expected a list")
    out = []
    for k, rec in enumerate(items):
        p = f"{path}.{key}[{k}]"
        _check_keys(rec, set(required) | set(optional), p)
        r = {name: _take(rec, name, p) for name in required}
        for name, default in optional.items():
            r[name] = _take(rec, name, p, int, default=default)
        for name in required:
            if r[name] < 0:
                raise ConfigError(f"{p}.{name}", "must be non-negative")
        out.append(r)
    return tuple(out)


@dataclass(frozen=True)
class DriveConfig:
    omega_in_hz: float
    delta_omega_hz: tuple[float, ...] = (0.0,)

    @classmethod
    def from_dict(cls, d, path="drive"):
        _check_keys(d, {"omega_in_hz", "delta_omega_hz"}, path)
        c = cls(_take(d, "omega_in_hz", path), _grid(d, "delta_omega_hz", path, default=(0.0,)))
        _positive(c.omega_in_hz, f"{path}.omega_in_hz")
        if any(x < 0 for x in c.delta_omega_hz):
            raise ConfigError(f"{path}.delta_omega_hz", "Stark shifts must be >= 0")
        return c

    def to_dict(self):
        return _clean(asdict(self))


@dataclass(frozen=True)
class RatesConfig:
    temperature: float = 0.016
    gamma_down_0: float = 5.0
    two_photon: bool = False
    two_out: bool = False

    @classmethod
    def from_dict(cls, d, path="rates"):
        _check_keys(d, {f.name for f in fields(cls)}, path)
        c = cls(
            _take(d, "temperature", path, default=0.016),
            _take(d, "gamma_down_0", path, default=5.0),
            _take(d, "two_photon", path, bool, default=False),
            _take(d, "two_out", path, bool, default=False),
        )
        _positive(c.temperature, f"{path}.temperature")
        if c.gamma_down_0 < 0:
            raise ConfigError(f"{path}.gamma_down_0", "must be >= 0")
        return c

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScanConfig:
    omega_q_hz: tuple[float, ...]
    max_level: int = 10
    max_order: int = 3
    feature_tolerance_hz: float | None = None

    @classmethod
    def from_dict(cls, d, path="scan"):
        _check_keys(d, {f.name for f in fields(cls)}, path)
        c = cls(
            _grid(d, "omega_q_hz", path, allow_empty=True),
            _take(d, "max_level", path, int, default=10),
            _take(d, "max_order", path, int, default=3),
            _take(d, "feature_tolerance_hz", path, default=None),
        )
        if not 1 <= c.max_order <= 5:
            raise ConfigError(f"{path}.max_order", "must lie in 1..5")
        if c.max_level < 1:
            raise ConfigError(f"{path}.max_level", "must be >= 1")
        return c

    def to_dict(self):
        return _clean(asdict(self))


@dataclass(frozen=True)
class EmulationConfig:
    shots: int
    durations_s: tuple[float, ...]
    seed: int | None = None
    initial_states: tuple[int, ...] = (0, 1)
    delta_omega_hz: float | None = None
    separation_ratio: float = 6.0
    model_levels: int = 4
    readout_backaction: bool = False
    rates: tuple[dict, ...] | None = None

    @classmethod
    def from_dict(cls, d, path="emulation"):
        _check_keys(d, {f.name for f in fields(cls)}, path)
        rates = None
        if d.get("rates") is not None:
            rates = _records(d, "rates", path, ("rate_hz",), optional={"initial": None, "final": None})
            for k, r in enumerate(rates):
                if r["initial"] is None or r["final"] is None:
                    raise ConfigError(f"{path}.rates[{k}]", "initial and final are required")
        states = d.get("initial_states", [0, 1])
        if not isinstance(states, list) or not states:
            raise ConfigError(f"{path}.initial_states", "expected a non-empty list")
        c = cls(
            shots=_take(d, "shots", path, int),
            durations_s=_grid(d, "durations_s", path),
            seed=_take(d, "seed", path, int, default=None),
            initial_states=tuple(_take({"s": s}, "s", f"{path}.initial_states", int) for s in states),
            delta_omega_hz=_take(d, "delta_omega_hz", path, default=None),
            separation_ratio=_take(d, "separation_ratio", path, default=6.0),
            model_levels=_take(d, "model_levels", path, int, default=4),
            readout_backaction=_take(d, "readout_backaction", path, bool, default=False),
            rates=rates,
        )
        if c.shots < 1:
            raise ConfigError(f"{path}.shots", "must be >= 1")
        if c.durations_s[0] < 0:
            raise ConfigError(f"{path}.durations_s", "durations must be >= 0")
        if len(c.durations_s) < 3:
            raise ConfigError(f"{path}.durations_s", "need at least three durations for rate extraction")
        if c.seed is not None and c.seed < 0:
            raise ConfigError(f"{path}.seed", "must be a non-negative integer")
        _positive(c.separation_ratio, f"{path}.separation_ratio")
        if any(not 0 <= s < c.model_levels for s in c.initial_states):
            raise ConfigError(f"{path}.initial_states", "states must lie below model_levels")
        return c

    def to_dict(self):
        return _clean(asdict(self))


@dataclass(frozen=True)
class ImpedanceConfig:
    omega_hz: tuple[float, ...]

    @classmethod
    def from_dict(cls, d, path="impedance"):
        _check_keys(d, {"omega_hz"}, path)
        c = cls(_grid(d, "omega_hz", path))
        if c.omega_hz[0] <= 0:
            raise ConfigError(f"{path}.omega_hz", "frequencies must be positive")
        return c

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")

    @classmethod
    def from_dict(cls, d, path="output"):
        _check_keys(d, {"directory", "formats"}, path)
        fmts = d.get("formats", ["csv", "json"])
        if not isinstance(fmts, list) or any(f not in ("csv", "json") for f in fmts):
            raise ConfigError(f"{path}.formats", "formats must be a list drawn from csv, json")
        return cls(str(d.get("directory", "out")), tuple(fmts))

    def to_dict(self):
        return {"directory": self.directory, "formats": list(self.formats)}


_SECTIONS = {
    "device": DeviceConfig,
    "environment": EnvironmentConfig,
    "drive": DriveConfig,
    "rates": RatesConfig,
    "scan": ScanConfig,
    "emulation": EmulationConfig,
    "impedance": ImpedanceConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class RunConfig:
    device: DeviceConfig
    environment: EnvironmentConfig
    drive: DriveConfig | None = None
    rates: RatesConfig = field(default_factory=RatesConfig)
    scan: ScanConfig | None = None
    emulation: EmulationConfig | None = None
    impedance: ImpedanceConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, set(_SECTIONS), "")
        kw = {}
        for name, kind in _SECTIONS.items():
            if d.get(name) is not None:
                kw[name] = kind.from_dict(d[name], name)
            elif name in ("device", "environment"):
                raise ConfigError(name, "required section missing")
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            v = getattr(self, name)
            if v is not None:
                out[name] = v.to_dict()
        return out

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from None
        return cls.loads(text)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def require(self, section: str):
        v = getattr(self, section)
        if v is None:
            raise ConfigError(section, "required section missing for this command")
        return v

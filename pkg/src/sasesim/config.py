"""Flat JSON run configuration, schema validation and Kr unit conversion."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from scipy import constants

from .atomsolver import AtomParams
from .noisegen import PowerSpectralDensity, PsdFamily
from .pulse import FlatTopEnvelope, GaussianEnvelope

__all__ = [
    "ConfigError",
    "SimulationConfig",
    "load_config",
    "validate",
    "convert_units",
    "HBAR_EV_S",
    "GAMMA2_KR_MEV",
    "GAMMA2_KR",
    "rate_from_mev",
    "mev_from_lifetime",
]

HBAR_EV_S = constants.physical_constants["reduced Planck constant in eV s"][0]
GAMMA2_KR_MEV = 83.0
# natural width of the Kr 3d(5/2)^-1 5p level in rad/fs (about 0.1261, i.e. 1/7.93 fs)
GAMMA2_KR = GAMMA2_KR_MEV * 1e-3 / HBAR_EV_S * 1e-15

RATE_FIELDS = (
    "gamma", "sigma_omega", "gamma2", "gamma21", "rabi_peak", "detuning",
    "detuning_min", "detuning_max", "detuning_step",
    "rabi_values", "gamma_values", "delta_omega_values",
)
TIME_FIELDS = (
    "tau", "t0", "rise", "flat", "fall", "t_probe", "probe_offset", "max_lag", "tau_values",
)


def rate_from_mev(energy_mev: float) -> float:
    """Angular frequency in rad/fs for an energy width in meV."""
    return energy_mev * 1e-3 / HBAR_EV_S * 1e-15


def mev_from_lifetime(lifetime_fs: float) -> float:
    return HBAR_EV_S / (lifetime_fs * 1e-15) * 1e3


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``field: message`` strings."""

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


@dataclass
class SimulationConfig:
    units_mode: str = "dimensionless"
    psd_family: str = "gaussian"
    gamma: float = 0.72
    sigma_omega: float | None = None
    envelope: str = "gaussian"
    tau: float = 20.0
    t0: float | None = None
    rise: float | None = None
    flat: float | None = None
    fall: float | None = None
    peak_intensity: float = 1.0
    gamma2: float | None = None
    gamma21: float | None = None
    rabi_peak: float = 1e-2
    detuning: float = 0.0
    detuning_min: float = 0.0
    detuning_max: float = 3.0
    detuning_step: float = 0.05
    n_traj: int = 2000
    master_seed: int = 12345
    rabi_values: list = field(default_factory=list)
    gamma_values: list = field(default_factory=list)
    delta_omega_values: list = field(default_factory=list)
    tau_values: list = field(default_factory=list)
    families: list = field(default_factory=lambda: ["gaussian", "lorentzian"])
    fwhm_points: int = 41
    t_probe: float | None = None
    probe_offset: float | None = None
    max_lag: float | None = None
    correlator: str = "empirical"
    free_lorentz: bool = False
    n_samples: int = 3
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "SimulationConfig":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        validate(data)
        return cls(**data)

    # -- derived quantities ---------------------------------------------------

    @property
    def gamma2_value(self) -> float:
        if self.gamma2 is not None:
            return self.gamma2
        return GAMMA2_KR if self.units_mode == "physical_kr" else 1.0

    def psd(self, gamma: float | None = None, family: str | None = None):
        family = family or self.psd_family
        if family == "none":
            return None
        if gamma is None and self.sigma_omega is not None:
            return PowerSpectralDensity(PsdFamily(family), self.sigma_omega)
        g = self.gamma if gamma is None else gamma
        if g == 0:
            return None
        return PowerSpectralDensity.from_bandwidth(PsdFamily(family), g)

    def envelope_obj(self, tau: float | None = None):
        tau = self.tau if tau is None else tau
        try:
            if self.envelope == "gaussian":
                t0 = self.t0 if (self.t0 is not None and tau == self.tau) else 5.0 * tau
                return GaussianEnvelope(tau, t0, self.peak_intensity)
            rise = self.rise if self.rise is not None else tau
            fall = self.fall if self.fall is not None else tau
            flat = self.flat if self.flat is not None else 2.0 * tau
            t0 = self.t0 if self.t0 is not None else 5.0 * max(rise, fall) + 0.5 * flat
            return FlatTopEnvelope(rise, flat, fall, t0, self.peak_intensity)
        except ValueError as exc:
            raise ConfigError([f"envelope: {exc}"]) from exc

    def atom(self, **overrides) -> AtomParams:
        kw = dict(rabi_peak=self.rabi_peak, detuning=self.detuning,
                  gamma2=self.gamma2_value, gamma21=self.gamma21)
        kw.update(overrides)
        try:
            return AtomParams(**kw)
        except ValueError as exc:
            raise ConfigError([f"atom: {exc}"]) from exc

    def detunings(self) -> np.ndarray:
        lo, hi, step = self.detuning_min, self.detuning_max, self.detuning_step
        if hi < lo:
            raise ConfigError(["detuning_max: must be >= detuning_min"])
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)


_SCHEMA = None


def schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("sasesim").joinpath("schema/config.schema.json").read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def validate(data: dict) -> None:
    """Raise :class:`ConfigError` with one ``field: message`` entry per problem."""
    v = Draft202012Validator(schema())
    errs = []
    for e in sorted(v.iter_errors(data), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        errs.append(f"{where}: {e.message}")
    if errs:
        raise ConfigError(errs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> SimulationConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config: invalid JSON ({exc})"]) from exc
        if not isinstance(data, dict):
            raise ConfigError(["<root>: config must be a JSON object"])
    data.update(overrides or {})
    return SimulationConfig.from_dict(data)


def convert_units(cfg: SimulationConfig) -> SimulationConfig:
    """Physical Kr units (fs, rad/fs) to units of the natural linewidth.

    Rates are divided by ``gamma2`` (83 meV/hbar = 0.1261 rad/fs unless set)
    and times multiplied by it. Dimensionless configs are returned unchanged.
    """
    if cfg.units_mode == "dimensionless":
        return cfg
    g2 = cfg.gamma2_value
    out = {}
    for name in RATE_FIELDS:
        v = getattr(cfg, name)
        if v is None:
            continue
        out[name] = [x / g2 for x in v] if isinstance(v, list) else v / g2
    for name in TIME_FIELDS:
        v = getattr(cfg, name)
        if v is None:
            continue
        out[name] = [x * g2 for x in v] if isinstance(v, list) else v * g2
    out["units_mode"] = "dimensionless"
    out["gamma2"] = 1.0
    return cfg.replace(**out)

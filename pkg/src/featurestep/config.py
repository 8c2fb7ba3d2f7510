"""Flat ``key = value`` run configuration with typed keys and CLI overrides."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import ConfigError
from .impute import DEFAULT_DEVICE_SD, DEFAULT_MAX_GAP, Q_METHODS
from .inference import MCMCConfig, PriorConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _choice(*options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _str(text: str) -> str:
    return text.strip()


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key: (parser, default); a default of None means unset
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, None),
    "output_dir": (_str, "out"),
    # simulate
    "n_individuals": (int, 20),
    "n_days": (int, 200),
    "sigma2": (float, 272.0),
    "tau2": (float, 8600.0),
    "a": (float, 69.0),
    "b": (float, 337.0),
    "separation": (float, 1000.0),
    "simulator": (_choice("linearized", "exact"), "linearized"),
    "feature": (_str, "ice_edge"),
    "observe": (_bool, True),
    "gaps": (_ints, (2, 3, 4)),
    "device_class": (_str, "argos_b"),
    # impute
    "observations": (_str, None),
    "K": (int, 30),
    "q_method": (_choice(*Q_METHODS), "bootstrap"),
    "q": (float, None),
    "max_gap": (float, DEFAULT_MAX_GAP),
    # fit
    "imputations": (_str, None),
    "tracks": (_str, None),
    "iterations": (int, 20000),
    "burn_in": (int, 5000),
    "chains": (int, 2),
    "thin": (int, 1),
    "imputation_block": (int, 1),
    "shared_imputation": (_bool, False),
    "checkpoint_every": (int, 1000),
    "resume": (_bool, False),
    # boundary
    "posterior_dir": (_str, None),
    "step": (float, 5.0),
    "window": (_floats, None),
    # validate-linearization
    "radii": (_floats, (100.0, 300.0, 1000.0)),
    "val_sigma": (float, 16.5),
    "val_tau": (float, 93.0),
    "val_offset": (float, 50.0),
    "grid_n": (int, 512),
    # bench
    "bench_repeats": (int, 5),
}
for _name, _default in PriorConfig().__dict__.items():
    if _name == "center_mean":
        SCHEMA["prior.center_mean"] = (_floats, tuple(_default))
    else:
        SCHEMA[f"prior.{_name}"] = (float, float(_default))
for _dev, _sd in DEFAULT_DEVICE_SD.items():
    SCHEMA[f"device_sd.{_dev}"] = (float, float(_sd))


def _parse_value(key: str, text: str, where: str):
    if key.startswith("device_sd."):
        parser = float
    elif key in SCHEMA:
        parser = SCHEMA[key][0]
    else:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from exc


class RunConfig:
    """Typed configuration; unset keys fall back to :data:`SCHEMA` defaults."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self._values: dict[str, Any] = {}
        for k, v in (values or {}).items():
            self[k] = v

    def __setitem__(self, key: str, value) -> None:
        if key not in SCHEMA and not key.startswith("device_sd."):
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _parse_value(key, value, "value")
        self._values[key] = value

    def __getitem__(self, key: str):
        if key in self._values:
            return self._values[key]
        if key in SCHEMA:
            return SCHEMA[key][1]
        raise KeyError(key)

    def get(self, key: str, default=None):
        try:
            v = self[key]
        except KeyError:
            return default
        return default if v is None else v

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.effective() == other.effective()

    def keys(self) -> list[str]:
        extra = [k for k in self._values if k not in SCHEMA]
        return sorted(set(SCHEMA) | set(extra))

    def effective(self) -> dict[str, Any]:
        return {k: self[k] for k in self.keys() if self[k] is not None}

    @property
    def seed(self) -> int:
        if self["seed"] is None:
            raise ConfigError("a seed is required (set seed = <int> or pass --seed)")
        return int(self["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self["output_dir"])

    def device_sd(self) -> dict[str, float]:
        return {k.split(".", 1)[1]: float(self[k]) for k in self.keys() if k.startswith("device_sd.")}

    def priors(self) -> PriorConfig:
        kw = {k.split(".", 1)[1]: self[k] for k in self.keys() if k.startswith("prior.")}
        try:
            return PriorConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mcmc(self) -> MCMCConfig:
        try:
            return MCMCConfig(self["iterations"], self["burn_in"], self["thin"],
                              imputation_block=self["imputation_block"],
                              shared_imputation=self["shared_imputation"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def path(self, key: str, must_exist: bool = True) -> Path:
        value = self[key]
        if value is None:
            raise ConfigError(f"config key {key!r} is required for this command")
        p = Path(value)
        if must_exist and not p.exists():
            raise ConfigError(f"{key}: path does not exist: {p}")
        return p

    def dump(self, path) -> None:
        lines = [f"{k} = {_fmt(v)}" for k, v in self.effective().items()]
        Path(path).write_text("\n".join(lines) + "\n")


def parse_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg._values[key] = _parse_value(key, value, f"{source}: line {n}")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_text(text, str(p))


def apply_overrides(cfg: RunConfig, args: Iterable[str]) -> RunConfig:
    """Apply ``--key value`` (or ``--key=value``) pairs; dashes in keys read as underscores."""
    args = list(args)
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for {tok}")
            value = args[i + 1]
            i += 2
        key = key.replace("-", "_") if not key.startswith("device_sd.") else key
        cfg._values[key] = _parse_value(key, value, "command line")
    return cfg


"""Run configuration: strict YAML blocks in SI base units.

A config holds the constant, field, noise, readout and model blocks plus
one optional sub-block per subcommand under ``experiment``. Every key is
optional (defaults fill in), but unknown keys are errors. Serializing a
parsed config writes every key, so parse -> dump -> parse is a fixed
point.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field as dc_field

import yaml

from .model import FieldConfig, NvParams
from .propagator import NoiseModel, ReadoutModel

__all__ = ["ConfigError", "RunConfig", "EXPERIMENT_DEFAULTS", "load_config", "parse_config", "apply_overrides"]


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


SUBCOMMANDS = ("spectrum", "oscillation", "coupling-map", "correlation", "ensemble", "transfer",
               "design-gate", "validate")

EXPERIMENT_DEFAULTS = {
    "spectrum": {"f_start_hz": 2.5e6, "f_stop_hz": 8.0e6, "f_step_hz": 20e3, "n_p": 80,
                 "interpolate": True, "grid_s": 0.5e-9, "dip_prominence": 0.15},
    "oscillation": {"n_p_start": 0, "n_p_stop": 640, "n_p_step": 8, "branch": "-", "grid_s": 0.5e-9},
    "coupling-map": {"mode": "field", "b_z_start_t": 0.2, "b_z_stop_t": 0.35, "b_z_num": 16,
                     "b_perp_start_t": 0.0, "b_perp_stop_t": 7e-3, "b_perp_num": 15,
                     "stage_b_z_t": 0.28, "stage_half_width_m": 2e-3, "stage_num": 21,
                     "stage_x0_m": 0.0, "stage_y0_m": 0.0, "stage_tilt_t_per_m": 2.5},
    "correlation": {"t_free_start_s": 0.0, "t_free_stop_s": 4e-6, "t_free_step_s": 20e-9,
                    "n_p": None, "branch": "-", "grid_s": 0.5e-9, "dephase": True},
    "ensemble": {"scan": "correlation", "n_members": 8, "b_z_sigma_t": 0.5e-3, "b_perp_sigma_t": 0.5e-3,
                 "t2_dd_s": 10e-6},
    "transfer": {"theta_points": 17, "c0": 0.0, "c1": 1.0, "branch": "-", "variant": "three_pulse",
                 "grid_s": 0.5e-9},
    "design-gate": {"theta_rad": math.pi / 2, "b_perp_start_t": 2e-3, "b_perp_stop_t": 7e-3,
                    "b_perp_num": 51, "tolerance_rad": 0.02, "max_total_time_s": 50e-6, "branch": "-",
                    "grid_s": 0.5e-9, "interpolate": False, "coupling": "closed_form"},
    "validate": {},
}

_NOISE_KEYS = {"t2_dd_s": "t2_dd", "detuning_sigma_hz": "detuning_sigma", "seed": "seed",
               "stretch": "stretch", "n_samples": "n_samples"}
_READOUT_KEYS = {"brightness_0": "brightness_0", "contrast": "contrast", "shot_noise": "shot_noise"}
_MODEL_DEFAULTS = {"dim": 9, "drive": "center", "nuclear_pair": [0, -1]}
_TOP_KEYS = {"seed", "output_dir", "workers", "constants", "field", "noise", "readout", "model", "experiment"}


@dataclass
class RunConfig:
    params: NvParams = dc_field(default_factory=NvParams)
    field: FieldConfig = dc_field(default_factory=lambda: FieldConfig(0.28, 5e-3))
    noise: NoiseModel = dc_field(default_factory=NoiseModel)
    readout: ReadoutModel = dc_field(default_factory=ReadoutModel)
    model: dict = dc_field(default_factory=lambda: dict(_MODEL_DEFAULTS))
    experiment: dict = dc_field(default_factory=lambda: copy.deepcopy(EXPERIMENT_DEFAULTS))
    output_dir: str = "nvdd_out"
    seed: int = 0
    workers: int | None = None

    def model_dict(self) -> dict:
        m = dict(self.model)
        m["nuclear_pair"] = tuple(m["nuclear_pair"])
        return m

    def to_dict(self) -> dict:
        n = self.noise
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "workers": self.workers,
            "constants": self.params.to_config(),
            "field": self.field.to_config(),
            "noise": {"t2_dd_s": float(n.t2_dd), "detuning_sigma_hz": float(n.detuning_sigma), "seed": n.seed,
                      "stretch": float(n.stretch), "n_samples": n.n_samples},
            "readout": {"brightness_0": float(self.readout.brightness_0), "contrast": float(self.readout.contrast),
                        "shot_noise": bool(self.readout.shot_noise)},
            "model": {"dim": self.model["dim"], "drive": self.model["drive"],
                      "nuclear_pair": list(self.model["nuclear_pair"])},
            "experiment": copy.deepcopy(self.experiment),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)


def _block(raw, name):
    b = raw.get(name, {})
    if b is None:
        return {}
    if not isinstance(b, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(b).__name__}")
    return b


def _strict(block, allowed, where):
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(where + '.' + k for k in unknown)}")


def _num(v, key, kind=float):
    if isinstance(v, bool) or v is None:
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    try:
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None


def parse_config(raw: dict | None) -> RunConfig:
    """Validate a config mapping into a RunConfig (raises ConfigError)."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _strict(raw, _TOP_KEYS, "config")
    cfg = RunConfig()

    if "seed" in raw:
        cfg.seed = _num(raw["seed"], "seed", int)
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])
    if raw.get("workers") is not None:
        cfg.workers = _num(raw["workers"], "workers", int)
        if cfg.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {cfg.workers}")

    consts = _block(raw, "constants")
    try:
        base = cfg.params.to_config()
        base.update({k: _num(v, f"constants.{k}") for k, v in consts.items()})
        if "t_pi_s" in consts and "rabi_rate_hz" not in consts:
            base["rabi_rate_hz"] = 0.5 / base["t_pi_s"]
        cfg.params = NvParams.from_config(base)
    except ConfigError:
        raise
    except KeyError as e:
        raise ConfigError(f"constants: {e.args[0]}") from None
    except ValueError as e:
        raise ConfigError(f"constants: {e}") from None

    fb = _block(raw, "field")
    try:
        base = cfg.field.to_config()
        base.update({k: _num(v, f"field.{k}") for k, v in fb.items()})
        cfg.field = FieldConfig.from_config(base)
    except ConfigError:
        raise
    except KeyError as e:
        raise ConfigError(f"field: {e.args[0]}") from None
    except ValueError as e:
        raise ConfigError(f"field: {e}") from None

    nb = _block(raw, "noise")
    _strict(nb, _NOISE_KEYS, "noise")
    kw = {}
    for k, v in nb.items():
        kw[_NOISE_KEYS[k]] = _num(v, f"noise.{k}", int if k in ("seed", "n_samples") else float)
    try:
        cfg.noise = NoiseModel(**kw)
    except ValueError as e:
        raise ConfigError(f"noise: {e}") from None

    rb = _block(raw, "readout")
    _strict(rb, _READOUT_KEYS, "readout")
    kw = {}
    for k, v in rb.items():
        if k == "shot_noise":
            if not isinstance(v, bool):
                raise ConfigError(f"readout.shot_noise: expected true/false, got {v!r}")
            kw[k] = v
        else:
            kw[k] = _num(v, f"readout.{k}")
    try:
        cfg.readout = ReadoutModel(**kw)
    except ValueError as e:
        raise ConfigError(f"readout: {e}") from None

    mb = _block(raw, "model")
    _strict(mb, _MODEL_DEFAULTS, "model")
    model = dict(_MODEL_DEFAULTS, **mb)
    if model["dim"] not in (4, 9):
        raise ConfigError(f"model.dim: must be 4 or 9, got {model['dim']!r}")
    drive = model["drive"]
    if not (drive in ("pair", "center") or (isinstance(drive, (int, float)) and not isinstance(drive, bool))):
        raise ConfigError(f"model.drive: 'pair', 'center' or a frequency in Hz, got {drive!r}")
    pair = model["nuclear_pair"]
    if not (isinstance(pair, (list, tuple)) and len(pair) == 2 and set(pair) <= {1, 0, -1} and pair[0] != pair[1]):
        raise ConfigError(f"model.nuclear_pair: two distinct levels from (1, 0, -1), got {pair!r}")
    model["nuclear_pair"] = [int(pair[0]), int(pair[1])]
    cfg.model = model

    eb = _block(raw, "experiment")
    _strict(eb, EXPERIMENT_DEFAULTS, "experiment")
    for name, sub in eb.items():
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"experiment.{name}: expected a mapping")
        _strict(sub, EXPERIMENT_DEFAULTS[name], f"experiment.{name}")
        for k, v in sub.items():
            default = EXPERIMENT_DEFAULTS[name][k]
            where = f"experiment.{name}.{k}"
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{where}: expected true/false, got {v!r}")
            elif isinstance(default, int):
                v = _num(v, where, int)
            elif isinstance(default, float):
                v = _num(v, where)
            elif default is None:
                v = None if v is None else _num(v, where, int)
            else:
                v = str(v)
            cfg.experiment[name][k] = v
    _check_experiment(cfg.experiment)
    return cfg


def _check_experiment(exp):
    for name in ("oscillation", "correlation", "transfer", "design-gate"):
        if exp[name]["branch"] not in ("+", "-"):
            raise ConfigError(f"experiment.{name}.branch: must be '+' or '-', got {exp[name]['branch']!r}")
    if exp["ensemble"]["scan"] not in ("spectrum", "oscillation", "correlation"):
        raise ConfigError(f"experiment.ensemble.scan: spectrum, oscillation or correlation, got {exp['ensemble']['scan']!r}")
    if exp["coupling-map"]["mode"] not in ("field", "stage"):
        raise ConfigError(f"experiment.coupling-map.mode: 'field' or 'stage', got {exp['coupling-map']['mode']!r}")
    if exp["design-gate"]["coupling"] not in ("closed_form", "simulated"):
        raise ConfigError("experiment.design-gate.coupling: 'closed_form' or 'simulated'")
    if exp["transfer"]["variant"] not in ("three_pulse", "four_pulse"):
        raise ConfigError("experiment.transfer.variant: 'three_pulse' or 'four_pulse'")
    if exp["spectrum"]["n_p"] % 8 or exp["spectrum"]["n_p"] <= 0:
        raise ConfigError("experiment.spectrum.n_p: must be a positive multiple of 8")
    for k in ("n_p_start", "n_p_stop", "n_p_step"):
        if exp["oscillation"][k] % 8:
            raise ConfigError(f"experiment.oscillation.{k}: must be a multiple of 8")
    if exp["oscillation"]["n_p_step"] <= 0:
        raise ConfigError("experiment.oscillation.n_p_step: must be positive")
    for name, key in (("spectrum", "f_step_hz"), ("correlation", "t_free_step_s")):
        if exp[name][key] <= 0:
            raise ConfigError(f"experiment.{name}.{key}: must be positive")


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``block.key=value`` strings; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected block.key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        if not all(keys):
            raise ConfigError(f"--set {item!r}: empty key")
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError:
            raise ConfigError(f"--set {path}: cannot parse value {value!r}") from None
        if isinstance(parsed, (list, dict)):
            parsed = value.strip()  # e.g. a bare "-" branch name
        node = raw
        for k in keys[:-1]:
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {path}: {k} is not a block")
            node = nxt
        node[keys[-1]] = parsed
    return raw


def load_config(path=None, overrides=None, env=None) -> RunConfig:
    """Read a YAML file (or defaults), apply overrides and ``NVDD_SEED``."""
    env = os.environ if env is None else env
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from None
    raw = apply_overrides(raw, overrides)
    cfg = parse_config(raw)
    if env.get("NVDD_SEED") not in (None, ""):
        cfg.seed = _num(env["NVDD_SEED"], "NVDD_SEED", int)
    return cfg

"""Flat INI experiment configuration with strict validation.

Each subcommand reads one section named after it plus an optional
``[global]`` section. Keys are typed by a schema; unknown sections or keys are
rejected with file/line diagnostics.
"""
from __future__ import annotations

import configparser
import re

GLOBAL_SCHEMA = {
    "seed": (int, 0),
    "out": (str, "out"),
    "plots": (bool, False),
}

SCHEMAS = {
    "sim-check": {
        "plants": (int, 20),
        "max_order": (int, 5),
        "steps": (int, 200),
        "input_factor": (int, 10),
        "yk_pairs": (int, 20),
        "yk_steps": (int, 100),
        "max_q_order": (int, 3),
        "tol": (float, 1e-6),
        "force_short_window": (bool, False),
    },
    "rand-hankel": {
        "L_list": ("ints", [2, 5]),
        "N_list": ("ints", [100, 400, 1600]),
        "trials": (int, 200),
        "hw_n": ("ints", [10, 100, 1000, 10000]),
        "hw_alpha": (float, 0.1),
        "hw_trials": (int, 1000),
        "rollout_L": (int, 25),
        "rollout_N": ("ints", [100, 400, 1600, 4000]),
        "noise_std": (float, 0.1),
        "seeds": (int, 20),
        "dt": (float, 0.2),
        "rollout_steps": (int, 500),
        "divergence_factor": (float, 10.0),
    },
    "train-tank": {
        "sessions": (int, 20),
        "episodes": (int, 100),
        "steps": (int, 200),
        "k": (int, 4),
        "sigma": (float, 0.05),
        "eta": (float, 0.005),
        "normalize": (bool, True),
        "gamma_rl": (float, 0.99),
        "policy": (str, "nonlinear"),
        "q_order": (int, 2),
        "q_width": (int, 4),
        "beta": (float, 0.99),
        "id_samples": (int, 2000),
        "L": (int, 11),
        "action_scale": (float, 1e-4),
        "q_limit": (float, 5.0),
        "effort_weight": (float, 0.01),
        "noise_var": (float, 0.015),
        "score_scenarios": (int, 5),
    },
    "pi-tune": {
        "dt": (float, 0.5),
        "sessions": (int, 10),
        "episodes": (int, 30),
        "steps": (int, 60),
        "k": (int, 4),
        "sigma": (float, 0.05),
        "eta": (float, 0.01),
        "gamma_rl": (float, 0.99),
        "kp0": (float, 0.2),
        "ki0": (float, 0.1),
        "margin": (float, 0.05),
        "delta": (float, 0.05),
        "hankel_samples": (int, 200),
        "L": (int, 6),
        "horizon": (int, 80),
        "order": (int, 6),
        "kp_min": (float, -1.5),
        "kp_max": (float, 2.5),
        "ki_min": (float, 0.0),
        "ki_max": (float, 0.8),
        "boundary_points": (int, 40),
    },
}

QUICK_OVERRIDES = {
    "sim-check": {"plants": 5, "yk_pairs": 5},
    "rand-hankel": {"trials": 50, "hw_trials": 200, "hw_n": [10, 1000], "seeds": 10,
                    "rollout_N": [100, 1600]},
    "train-tank": {"sessions": 2, "episodes": 5, "id_samples": 1000},
    "pi-tune": {"sessions": 2, "episodes": 5},
}


class ConfigError(ValueError):
    """Invalid configuration; the message carries file/line/key context."""


def _line_of(text, section, key=None):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section and re.match(
                rf"\s*{re.escape(key)}\s*[=:]", line, re.IGNORECASE):
            return i
    return 0


def _convert(kind, raw):
    if kind is bool:
        v = raw.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "ints":
        parts = [p for p in re.split(r"[,\s]+", raw.strip()) if p]
        return [int(p) for p in parts]
    return kind(raw.strip())


def defaults(command):
    out = {k: v for k, (_, v) in GLOBAL_SCHEMA.items()}
    out.update({k: (list(v) if isinstance(v, list) else v)
                for k, (_, v) in SCHEMAS[command].items()})
    return out


def load(command, path=None, quick=False):
    """Typed settings for ``command``: defaults, then quick overrides, then the file."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = defaults(command)
    if quick:
        cfg.update(QUICK_OVERRIDES.get(command, {}))
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    for section in cp.sections():
        if section == "global":
            schema = GLOBAL_SCHEMA
        elif section == command:
            schema = SCHEMAS[command]
        elif section in SCHEMAS:
            continue
        else:
            raise ConfigError(f"{path}:{_line_of(text, section)}: unknown section [{section}]")
        for key, raw in cp.items(section):
            line = _line_of(text, section, key)
            if key not in schema:
                raise ConfigError(f"{path}:{line}: [{section}] unknown key {key!r}")
            kind = schema[key][0]
            try:
                cfg[key] = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{line}: [{section}] {key}: {exc}") from exc
    return cfg


def validate_positive(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if isinstance(v, list):
            if not v:
                raise ConfigError(f"{k}: list must not be empty")
            if any(x <= 0 for x in v):
                raise ConfigError(f"{k}: all values must be positive")
        elif not v > 0:
            raise ConfigError(f"{k}: must be positive, got {v}")

"""Run configuration: flat "key = value" files with verb-scoped sections,
flag overrides, strict key validation and a resolved-config echo.

Example file:

    [train-variational]
    L = 4
    epochs = 5000

Flags override file values (``--set epochs=100``).  Unknown keys are hard
errors, and every defaulted parameter appears in the resolved-config echo
written next to the outputs, so no run depends on silent defaults.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _float_list(text: str):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _int_list(text: str):
    return tuple(int(x) for x in text.replace(",", " ").split())


REQUIRED = object()

_COMMON = {
    "seed": (int, 0),
    "out": (str, "phi4ml-out"),
    "threads": (int, 0),      # 0: machine parallelism (numpy defaults)
    "plot": (_bool, False),
}

_SAMPLER = {
    "L": (int, 4),
    "periodic": (_bool, True),
    "burn_in": (int, 10000),
    "thinning": (int, 10),
    "n_chains": (int, 64),
    "proposal_width": (float, 1.0),
    "adapt": (_bool, True),
}

_TARGET = {
    "g1": (float, -1.0),
    "g2": (float, 1.52425),
    "g3": (float, 0.175),
    "g4": (float, 0.0),
    "g5": (float, 0.0),
    "active_terms": (_int_list, (1, 2, 3)),
}

SCHEMAS = {
    "sample": {**_COMMON, **_SAMPLER,
               "n_samples": (int, 10000),
               "checkpoint": (str, ""),
               "w": (float, 1.0), "a": (float, 1.52425),
               "b": (float, 0.175), "r": (float, 0.0)},
    "train-variational": {**_COMMON, **_TARGET,
                          "L": (int, 4), "periodic": (_bool, True),
                          "epochs": (int, 5000),
                          "learning_rate": (float, 1e-3),
                          "samples_per_epoch": (int, 1000),
                          "sweeps_per_epoch": (int, 50),
                          "burn_in": (int, 1000),
                          "proposal_width": (float, 1.0),
                          "tie": (_bool, True),
                          "resample_every": (int, 0),
                          "tail_average": (float, 0.1),
                          "grad_ceiling": (float, 1e6),
                          "init": (str, "random"),
                          "log_every": (int, 0)},
    "train-data": {**_COMMON,
                   "dataset": (str, REQUIRED),
                   "periodic": (_bool, True),
                   "epochs": (int, 1000),
                   "learning_rate": (float, 0.02),
                   "cd_steps": (int, 10),
                   "n_chains": (int, 64),
                   "batch_size": (int, 0),
                   "tie": (_bool, True),
                   "freeze_r": (_bool, False),
                   "init": (str, "moment"),
                   "proposal_width": (float, 0.5),
                   "burn_in": (int, 500),
                   "eval_samples": (int, 10000),
                   "rollout_checkpoints": (_int_list, ()),
                   "log_every": (int, 0)},
    "reweight": {**_COMMON, **_TARGET,
                 "ensemble": (str, REQUIRED),
                 "j": (int, 4),
                 "gprime": (_float_list, REQUIRED),
                 "observable": (str, "action_real"),
                 "include_complex": (_bool, True)},
    "weight-function": {**_COMMON, **_TARGET,
                        "ensemble": (str, REQUIRED),
                        "j": (int, 4),
                        "gprime": (_float_list, REQUIRED),
                        "reference_gprime": (float, None),
                        "bins": (int, 64),
                        "threshold": (float, 0.5),
                        "include_complex": (_bool, True)},
    "rbm-train": {**_COMMON,
                  "dataset": (str, REQUIRED),
                  "n_hidden": (int, 64),
                  "hidden_kind": (str, "binary"),
                  "epochs": (int, 50),
                  "learning_rate": (float, 1e-3),
                  "cd_steps": (int, 1),
                  "batch_size": (int, 0),
                  "persistent": (_bool, False),
                  "resize": (int, 0),
                  "log_every": (int, 0)},
    "rbm-features": {**_COMMON,
                     "checkpoint": (str, REQUIRED),
                     "rows": (int, 0),
                     "cols": (int, 0)},
    "oracle": {**_COMMON,
               "L": (int, 2),
               "periodic": (_bool, True),
               "phi_max": (float, 4.0),
               "points_per_site": (int, 41),
               "w": (float, 0.3), "a": (float, 0.8),
               "b": (float, 0.2), "r": (float, 0.0),
               **_TARGET},
}


@dataclass
class RunConfig:
    verb: str
    params: dict

    def __getitem__(self, key):
        return self.params[key]


def parse_config(verb: str, config_file: str | None = None,
                 overrides: list[str] | None = None) -> RunConfig:
    """Resolve verb parameters from a config file plus flag overrides."""
    if verb not in SCHEMAS:
        raise ConfigError(f"unknown verb {verb!r}; choose from: "
                          + ", ".join(sorted(SCHEMAS)))
    schema = SCHEMAS[verb]
    raw = {}

    if config_file:
        if not os.path.exists(config_file):
            raise FileNotFoundError(f"config file not found: {config_file}")
        parser = configparser.ConfigParser()
        parser.optionxform = str          # keys are case-sensitive (e.g. L)
        parser.read(config_file)
        if parser.has_section(verb):
            raw.update(dict(parser.items(verb)))
        # DEFAULT section entries apply to every verb via configparser

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, val = item.partition("=")
        raw[key.strip()] = val.strip()

    params = {}
    for key, val in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for verb {verb!r}")
        conv = schema[key][0]
        try:
            params[key] = conv(val) if isinstance(val, str) else val
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r} ({exc})") from exc
    for key, (conv, default) in schema.items():
        if key not in params:
            if default is REQUIRED:
                raise ConfigError(f"missing required key {key!r} for verb {verb!r}")
            params[key] = default
    if params.get("threads", 0) == 0 and os.environ.get("PHI4ML_THREADS"):
        params["threads"] = int(os.environ["PHI4ML_THREADS"])
    return RunConfig(verb=verb, params=params)


def resolved_config_text(config: RunConfig) -> str:
    """Echo of the fully-resolved configuration, defaults included."""
    lines = [f"[{config.verb}]"]
    for key in sorted(config.params):
        val = config.params[key]
        if isinstance(val, tuple):
            val = ", ".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = str(val).lower()
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"

"""TOML configuration loading, environment overrides, and section builders.

Configuration files group settings by subcommand section ([prior],
[model], [train], [predict], [eval], [bench], [diag]).  Environment
variables of the form SURVPFN_<SECTION>__<KEY>=<toml value> override
individual keys after the file is read, so CI can tweak a run without
editing files.
"""

from __future__ import annotations

import copy
import os

try:
    import tomllib as tomli
except ModuleNotFoundError:
    import tomli

from .errors import ConfigError
from .prior import CENSORING_MECHANISMS, FAMILIES, META_FAMILY, PriorConfig

ENV_PREFIX = "SURVPFN"


def load_toml(path) -> dict:
    """Parse a TOML file; syntax problems surface with line/column info."""
    try:
        with open(path, "rb") as f:
            return tomli.load(f)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def parse_env_value(text: str):
    """Interpret an override as a TOML literal, falling back to a string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_env_overrides(cfg: dict, environ=None, prefix: str = ENV_PREFIX) -> dict:
    """Overlay SURVPFN_SECTION__KEY=value pairs onto a parsed config."""
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(cfg)
    marker = prefix + "_"
    for name in sorted(environ):
        if not name.startswith(marker) or "__" not in name:
            continue
        path = name[len(marker):].lower().split("__")
        if not all(path):
            raise ConfigError(f"malformed override variable {name!r}")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {name!r} descends into a non-table value")
        node[path[-1]] = parse_env_value(environ[name])
    return out


def take(table: dict, key: str, default=None, required: bool = False):
    """Pop a key from a config table, enforcing presence when required."""
    if required and key not in table:
        raise ConfigError(f"missing required config key {key!r}")
    return table.pop(key, default)


def reject_leftovers(table: dict, where: str) -> None:
    if table:
        raise ConfigError(f"unknown keys in {where}: {sorted(table)}")


def _one_hot(choice: str, names: tuple, what: str) -> tuple:
    if choice not in names:
        raise ConfigError(f"{what} must be one of {names}, got {choice!r}")
    return tuple(1.0 if n == choice else 0.0 for n in names)


def prior_config_from_dict(raw: dict) -> PriorConfig:
    """Build a PriorConfig from a [prior] section.

    ``family`` forces one concrete family or the kitchen-sink meta
    family (the default); ``censoring`` forces one mechanism.
    """
    table = dict(raw)
    kwargs: dict = {}
    family = take(table, "family", META_FAMILY)
    if family != META_FAMILY:
        kwargs["family_weights"] = (*_one_hot(family, FAMILIES, "family"), 0.0)
    censoring = take(table, "censoring")
    if censoring is not None:
        kwargs["censoring_weights"] = _one_hot(censoring, CENSORING_MECHANISMS, "censoring")
    for key in ("d_range", "t_max_range", "rate_range", "knot_range", "mixture_components"):
        value = take(table, key)
        if value is not None:
            kwargs[key] = tuple(value)
    probe = take(table, "calibration_probe")
    if probe is not None:
        kwargs["calibration_probe"] = int(probe)
    # corpus-shape keys consumed by the gen-prior command, not PriorConfig
    for key in ("n_tasks", "n_ctx", "n_query", "seed", "format"):
        table.pop(key, None)
    reject_leftovers(table, "[prior]")
    return PriorConfig(**kwargs)

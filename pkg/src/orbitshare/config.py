"""Run configuration: INI-style text in, validated :class:`RunConfig` out.

Sections and keys are listed in ``SCHEMA``. Every key except the two link
sections has a default, so a config only needs ``[link.leo]`` and
``[link.geo]``.
"""

from __future__ import annotations

import configparser
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

from orbitshare.deanalysis import DeConfig
from orbitshare.linkbudget import LinkParams
from orbitshare.sweep import PAIR_MODES, LoadGrid

REQUIRED = object()


class ConfigParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ConfigValidationError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


class UnknownKeyWarning(UserWarning):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


_LINK = {
    "tx_power_dbm": (float, REQUIRED),
    "tx_gain_dbi": (float, REQUIRED),
    "rx_gain_dbi": (float, REQUIRED),
    "path_loss_db": (float, REQUIRED),
    "noise_temp_dbk": (float, REQUIRED),
    "bandwidth_hz": (float, REQUIRED),
    "carrier_freq_hz": (float, 2e9),
    "snr_override_db": (_opt_float, None),
}

SCHEMA = {
    "link.leo": _LINK,
    "link.geo": _LINK,
    "frame": {
        "n_leo_slots": (int, 400),
        "alpha": (int, 1),
        "alphas": (_ints, [1, 2, 4, 5, 8]),
    },
    "traffic": {
        "scenario": (_choice("a", "b"), "a"),
        "service": (_choice("leo", "geo"), "leo"),
        "beta": (float, 1.0),
        "betas": (_floats, [0.25, 1.0, 4.0]),
        "rates": (_floats, []),
        "min_rate": (float, 0.1),
        "min_rate_pairs": (float, 0.3),
        "rate_step": (_opt_float, 0.02),
        "skip_infeasible": (_bool, True),
    },
    "loads": {
        "start": (float, 0.1),
        "stop": (float, 4.0),
        "step": (float, 0.05),
        "auto_extend": (_bool, True),
        "max_load": (float, 64.0),
    },
    "run": {
        "n_frames": (int, 2000),
        "master_seed": (int, 0),
        "pair_mode": (_choice(*PAIR_MODES), "per-service-argmax"),
        "out_dir": (str, ""),
    },
    "de": {
        "grid_points": (int, 10_000),
        "fp_tolerance": (float, 1e-10),
        "max_iterations": (int, 100_000),
        "bisection_tolerance": (float, 1e-4),
    },
}


@dataclass
class RunConfig:
    link_leo: LinkParams
    link_geo: LinkParams
    n_leo_slots: int = 400
    alpha: int = 1
    alphas: list = field(default_factory=lambda: [1, 2, 4, 5, 8])
    scenario: str = "a"
    service: str = "leo"
    beta: float = 1.0
    betas: list = field(default_factory=lambda: [0.25, 1.0, 4.0])
    rates: list = field(default_factory=list)
    min_rate: float = 0.1
    min_rate_pairs: float = 0.3
    rate_step: Optional[float] = 0.02
    skip_infeasible: bool = True
    loads: LoadGrid = LoadGrid()
    n_frames: int = 2000
    master_seed: int = 0
    pair_mode: str = "per-service-argmax"
    out_dir: str = ""
    de: DeConfig = DeConfig()


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if m := re.fullmatch(r"\[([^\]]+)\]", line):
            section = m.group(1).strip()
        elif section and (m := re.match(r"([^=#]+?)\s*=", line)):
            lines.setdefault((section, m.group(1).strip().lower()), i)
    return lines


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), interpolation=None,
                                   default_section="\0none")
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigParseError("key outside any [section]", e.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigParseError(e.message.split(": ", 1)[-1] if hasattr(e, "message") else str(e),
                               e.lineno) from None
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigParseError("expected 'key = value'", line) from None
    return cp


def parse_config(text: str, strict: bool = True) -> RunConfig:
    """Parse and validate config text.

    Unknown sections or keys raise :class:`ConfigValidationError` when
    ``strict`` and emit :class:`UnknownKeyWarning` otherwise.
    """
    cp = _read(text)
    where = _key_lines(text)
    problems: list[str] = []
    values: dict = {}

    for section in cp.sections():
        if section not in SCHEMA:
            msg = f"unknown section [{section}]"
            problems.append(msg) if strict else warnings.warn(msg, UnknownKeyWarning, stacklevel=2)
            continue
        for key, raw in cp.items(section):
            loc = f"[{section}] {key} (line {where.get((section, key), '?')})"
            if key not in SCHEMA[section]:
                msg = f"{loc}: unknown key"
                problems.append(msg) if strict else warnings.warn(msg, UnknownKeyWarning, stacklevel=2)
                continue
            conv = SCHEMA[section][key][0]
            try:
                values[(section, key)] = conv(raw)
            except ValueError as e:
                problems.append(f"{loc}: {e}")

    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if (section, key) in values:
                continue
            if default is REQUIRED:
                if not cp.has_section(section):
                    msg = f"missing required section [{section}]"
                    if msg not in problems:
                        problems.append(msg)
                else:
                    problems.append(f"[{section}] missing required key {key}")
            else:
                values[(section, key)] = default

    cfg = _build(values, problems)
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def _build(v: dict, problems: list) -> Optional[RunConfig]:
    def link(section):
        if any((section, k) not in v for k in _LINK):
            return None
        kw = {k: v[(section, k)] for k in _LINK}
        try:
            return LinkParams(**kw)
        except ValueError as e:
            problems.append(f"[{section}] {e}")
            return None

    leo, geo = link("link.leo"), link("link.geo")
    n = v[("frame", "n_leo_slots")]
    if n < 2:
        problems.append("[frame] n_leo_slots must be at least 2")
    alphas = v[("frame", "alphas")]
    for a in [v[("frame", "alpha")], *alphas]:
        if a < 1:
            problems.append(f"[frame] alpha {a} must be a positive integer")
        elif n >= 2 and n % a:
            problems.append(f"[frame] alpha {a} does not divide n_leo_slots {n}")
        elif n // a < 2:
            problems.append(f"[frame] alpha {a} leaves fewer than 2 GEO slots")
    if not alphas:
        problems.append("[frame] alphas must not be empty")
    for key in ("beta",):
        if not v[("traffic", key)] > 0:
            problems.append(f"[traffic] {key} must be positive")
    if not all(b > 0 for b in v[("traffic", "betas")]) or not v[("traffic", "betas")]:
        problems.append("[traffic] betas must be a non-empty list of positive values")
    for r in v[("traffic", "rates")]:
        if not (r > 0 and math.isfinite(r)):
            problems.append(f"[traffic] rate {r} must be positive and finite")
    if not v[("traffic", "min_rate")] > 0 or not v[("traffic", "min_rate_pairs")] > 0:
        problems.append("[traffic] min_rate and min_rate_pairs must be positive")
    step = v[("traffic", "rate_step")]
    if step is not None and not step > 0:
        problems.append("[traffic] rate_step must be positive or none")
    try:
        loads = LoadGrid(*(v[("loads", k)] for k in ("start", "stop", "step", "auto_extend", "max_load")))
    except ValueError as e:
        problems.append(f"[loads] {e}")
        loads = None
    if v[("run", "n_frames")] < 1:
        problems.append("[run] n_frames must be >= 1")
    try:
        de = DeConfig(*(v[("de", k)] for k in SCHEMA["de"]))
    except ValueError as e:
        problems.append(f"[de] {e}")
        de = None
    if problems:
        return None
    return RunConfig(
        link_leo=leo, link_geo=geo, n_leo_slots=n, alpha=v[("frame", "alpha")], alphas=alphas,
        scenario=v[("traffic", "scenario")], service=v[("traffic", "service")],
        beta=v[("traffic", "beta")], betas=v[("traffic", "betas")], rates=v[("traffic", "rates")],
        min_rate=v[("traffic", "min_rate")], min_rate_pairs=v[("traffic", "min_rate_pairs")],
        rate_step=step, skip_infeasible=v[("traffic", "skip_infeasible")], loads=loads,
        n_frames=v[("run", "n_frames")], master_seed=v[("run", "master_seed")],
        pair_mode=v[("run", "pair_mode")], out_dir=v[("run", "out_dir")], de=de,
    )

"""Run configuration: one INI file holding every module's defaults.

Every key is validated against a typed schema; errors name the file, line,
section and key. Values from ``overrides`` (e.g. command-line flags) win
over the file.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError
from .gfo import OptConfig
from .hand.tracker import HandTrackConfig
from .object_tracker import ObjectTrackConfig
from .refine import RefineConfig
from .shapes import PRIMITIVES
from .synth import GRASP_NAMES, NoiseModel, TrajectoryConfig


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _names(allowed):
    def parse(text):
        names = tuple(n.strip() for n in text.split(",") if n.strip())
        if not names:
            raise ValueError("empty list")
        bad = [n for n in names if n not in allowed]
        if bad:
            raise ValueError(f"unknown name(s) {', '.join(bad)}; choose from {', '.join(allowed)}")
        return names
    return parse


def _choice(*allowed):
    def parse(text):
        v = text.strip()
        if v not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {v!r}")
        return v
    return parse


def _num(kind, lo=None, hi=None, open_lo=False):
    def parse(text):
        v = kind(text)
        if kind is float and not math.isfinite(v):
            raise ValueError("must be finite")
        if lo is not None and (v < lo or (open_lo and v == lo)):
            raise ValueError(f"must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return v
    return parse


_INT0 = _num(int, 0)
_INT1 = _num(int, 1)
_POS = _num(float, 0.0, open_lo=True)
_NONNEG = _num(float, 0.0)

SCHEMA = {
    "run": {"seed": _INT0},
    "synth": {
        "kind": _choice("grasp", "object"), "sequences": _INT1, "frames": _num(int, 2),
        "objects": _names(tuple(PRIMITIVES)), "grasps": _names(GRASP_NAMES),
        "k_min": _INT1, "k_max": _INT1, "view_azimuth_min": _num(float, 0.0, 90.0),
        "view_azimuth_max": _num(float, 0.0, 90.0), "max_penetration": _POS,
        "max_rotation": _POS, "max_translation": _POS,
    },
    "noise": {"sigma": _NONNEG, "quantization": _NONNEG, "dropout": _num(float, 0.0, 1.0),
              "edge_band": _INT0},
    "object": {
        "resolution": _num(int, 8), "particles": _num(int, 8), "iterations": _INT0,
        "max_points": _INT1, "history_size": _INT1, "shape_update_period": _INT1,
        "sensor_sigma": _NONNEG, "divergence_factor": _POS,
    },
    "hand": {
        "particles": _num(int, 8), "iterations": _INT0, "passes": _INT1, "max_points": _INT1,
        "joint_weight": _NONNEG, "theta_prior": _NONNEG, "max_update": _POS, "update_shape": _bool,
    },
    "refine": {
        "w_pen": _NONNEG, "w_attr": _NONNEG, "w_joint": _NONNEG, "w_sil": _NONNEG, "gate": _POS,
        "joint_norm": _choice("l2", "l1"), "passes": _INT1, "particles": _num(int, 8),
        "global_iterations": _INT0, "finger_iterations": _INT0,
    },
    "bench": {"frames": _num(int, 2), "refine_frames": _INT0},
}


def default_config_text():
    return resources.files("hotrack.data").joinpath("default.cfg").read_text()


def _key_lines(text):
    """``(section, key) -> line number`` for every assignment in ``text``."""
    lines, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    lines[(section, line.split(sep, 1)[0].strip().lower())] = n
                    break
    return lines


@dataclass
class Config:
    values: dict  # section -> key -> parsed value
    source: str = "<defaults>"

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    def snapshot(self):
        """JSON-ready copy of every value."""
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in kv.items()}
                for s, kv in self.values.items()}

    # -- module configs -------------------------------------------------

    def noise_model(self):
        n = self.values["noise"]
        return NoiseModel(n["sigma"], n["quantization"], n["dropout"], n["edge_band"])

    def trajectory_config(self):
        s = self.values["synth"]
        try:
            return TrajectoryConfig(frames=s["frames"], k_range=(s["k_min"], s["k_max"]),
                                    view_azimuth=(math.radians(s["view_azimuth_min"]),
                                                  math.radians(s["view_azimuth_max"])),
                                    max_penetration=s["max_penetration"])
        except ConfigError as exc:
            raise ConfigError(f"{self.source}: [synth] k_min/k_max: {exc}") from None

    def object_config(self):
        o = self.values["object"]
        opt = OptConfig(particles=o["particles"], iterations=o["iterations"],
                        initial_step=np.array([math.radians(3.0)] * 3 + [0.01] * 3),
                        tolerance=1e-3, seed=self.seed)
        return ObjectTrackConfig(optimizer=opt, max_points=o["max_points"], history_size=o["history_size"],
                                 shape_update_period=o["shape_update_period"],
                                 sensor_sigma=o["sensor_sigma"], divergence_factor=o["divergence_factor"],
                                 seed=self.seed)

    def hand_config(self):
        h = self.values["hand"]
        base = HandTrackConfig()
        return HandTrackConfig(
            max_points=h["max_points"], passes=h["passes"], joint_weight=h["joint_weight"],
            theta_prior=h["theta_prior"], max_update=h["max_update"], update_shape=h["update_shape"],
            global_optimizer=base.global_optimizer.replace(particles=h["particles"], iterations=h["iterations"]),
            finger_optimizer=base.finger_optimizer.replace(particles=h["particles"], iterations=h["iterations"]),
            seed=self.seed)

    def refine_config(self):
        r = self.values["refine"]
        base = RefineConfig()
        return RefineConfig(
            w_pen=r["w_pen"], w_attr=r["w_attr"], w_joint=r["w_joint"], w_sil=r["w_sil"], gate=r["gate"],
            joint_norm=r["joint_norm"], passes=r["passes"],
            global_optimizer=base.global_optimizer.replace(particles=r["particles"],
                                                           iterations=r["global_iterations"]),
            finger_optimizer=base.finger_optimizer.replace(particles=r["particles"],
                                                           iterations=r["finger_iterations"]))


def _parse(text, source, values, lines_out):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{source}:{lines.get((section, key), '?')}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: [{section}] unknown key {key!r}")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: [{section}] {key}: {exc}") from None
            lines_out[(section, key)] = where


def _check(values, where):
    s = values["synth"]
    if not s["k_min"] <= s["k_max"] < s["frames"]:
        raise ConfigError(f"{where.get(('synth', 'k_max'), where.get(('synth', 'k_min'), '<config>'))}: "
                          f"[synth] k_min/k_max: need k_min <= k_max < frames, got "
                          f"{s['k_min']}, {s['k_max']}, frames {s['frames']}")
    if s["view_azimuth_min"] > s["view_azimuth_max"]:
        raise ConfigError(f"{where.get(('synth', 'view_azimuth_min'), '<config>')}: "
                          "[synth] view_azimuth_min exceeds view_azimuth_max")


def load_config(path=None, overrides=None):
    """Defaults, then ``path`` (if given), then ``{(section, key): value}`` overrides."""
    values = {s: {} for s in SCHEMA}
    where = {}
    _parse(default_config_text(), "<defaults>", values, where)
    source = "<defaults>"
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        _parse(text, str(path), values, where)
        source = str(path)
    for (section, key), value in (overrides or {}).items():
        if value is None:
            continue
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown setting [{section}] {key}")
        try:
            values[section][key] = SCHEMA[section][key](str(value)) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"command line: [{section}] {key}: {exc}") from None
        where[(section, key)] = "command line"
    _check(values, where)
    return Config(values, source)

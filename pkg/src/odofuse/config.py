"""Flat TOML-style key/value config files and the simulation settings.

The parser covers the subset the CLI needs: `key = value` lines, `#` comments,
JSON-style scalars and lists (numbers, true/false, quoted strings, [1, 2, 3]),
and bare words as strings.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def parse_kv_file(path) -> dict:
    path = Path(path)
    out: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}: line {lineno}: empty key")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value.strip("\"'")
    return out


def apply_config(instance, values: dict, path="<config>"):
    """Overwrite dataclass fields from a parsed key/value mapping."""
    names = {f.name for f in dataclasses.fields(instance)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"{path}: unknown key {key!r} for {type(instance).__name__}")
        current = getattr(instance, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(instance, key, value)
    return instance


@dataclass
class SimConfig:
    """Synthetic dataset settings for the `simulate` command."""

    duration: float = 120.0
    rate: float = 100.0
    profile: str = "walk"
    count: int = 1
    gyro_noise: float = 0.005  # rad/s per sample
    accel_noise: float = 0.05  # m/s^2 per sample
    mag_noise: float = 0.5  # microtesla per sample
    gyro_bias_sigma: float = 0.01  # rad/s, per-trajectory constant bias draw
    accel_bias_sigma: float = 0.05  # m/s^2
    hard_iron: tuple = (0.0, 0.0, 0.0)
    soft_iron_diag: tuple = (1.0, 1.0, 1.0)  # symmetric diagonal distortion
    mag_bumps: int = 6
    mag_max_perturbation: float = 5.0
    mag_area: float = 30.0
    calibration_duration: float = 30.0

    def magnetic_map(self, seed: int):
        from .simkit import MagneticMap

        if self.mag_bumps <= 0:
            return MagneticMap()
        return MagneticMap.random(
            seed=seed,
            n_bumps=self.mag_bumps,
            max_perturbation=self.mag_max_perturbation,
            area=self.mag_area,
        )

    def sensor_for(self, rng: np.random.Generator):
        from .simkit import SensorModel

        return SensorModel(
            rate=self.rate,
            gyro_noise=self.gyro_noise,
            gyro_bias=rng.normal(0.0, self.gyro_bias_sigma, 3),
            accel_noise=self.accel_noise,
            accel_bias=rng.normal(0.0, self.accel_bias_sigma, 3),
            mag_noise=self.mag_noise,
            hard_iron=np.asarray(self.hard_iron, dtype=float),
            soft_iron=np.diag(np.asarray(self.soft_iron_diag, dtype=float)),
        )

"""Run configuration: one structured document mirroring every module's
declared defaults, with JSON round-tripping for the CLI."""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerConfig
from .robot import PlantParams
from .stiffness import ExcitationParams

CONFIG_VERSION = 1


@dataclass
class TeleopConfig:
    scale: float = 0.8
    master_damping: float = 0.005   # N*s/mm
    fixture_min: tuple = (-30.0, -50.0)  # mm, x/y
    fixture_max: tuple = (30.0, 50.0)
    k_wall: float = 1.0             # N/mm


@dataclass
class EstimationConfig:
    window: int = 500       # samples per regression window (one period at 1 kHz)
    slide: int = 250        # samples between fits (half period)
    mu_window: int = 250    # positions averaged for the depth reference
    min_pairs: int = 8
    min_spread: float = 0.05  # mm
    max_drift: float = 1.5    # mm lateral travel tolerated per window
    # commanded lateral speed above which palpation cycles are invalid
    # (repositioning moves); windows spanning such motion are discarded
    max_command_speed: float = 4.0  # mm/s


@dataclass
class MapConfig:
    step: float = 2.0         # mm grid pitch
    smoothness: float = 1e-2  # Laplacian penalty
    grad_frac: float = 0.05
    update_rate: float = 50.0  # Hz display tick


@dataclass
class ScanConfig:
    # slow enough that the depth oscillation dominates the window motion
    # even on the stiff plateau, keeping the direction fit near-normal
    speed: float = 2.0        # mm/s along the scan line
    approach_speed: float = 10.0  # mm/s free-space descent
    hover: float = 8.0        # mm above surface before descent
    settle_s: float = 0.75    # s to seed estimation before moving
    refine: bool = True       # parabolic sub-sample refinement of the minimum
    median_filter: bool = True  # 3-point median over the profile kappas


@dataclass
class ExperimentConfig:
    trials: int = 10
    seed: int = 0
    timeout_s: float = 300.0
    perception_sigma: float = 6.0   # mm landmark/visual reading noise
    depth_noise: float = 0.4        # mm perceived-depth discrimination
    readout_noise: float = 0.8      # mm reading a location off the map display
    reaction_delay: float = 0.3     # s between user decisions
    start_pos: tuple = (0.0, 0.0, 45.0)


@dataclass
class RunConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    excitation: ExcitationParams = field(default_factory=ExcitationParams)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    map: MapConfig = field(default_factory=MapConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def to_dict(cfg):
    out = {"config_version": CONFIG_VERSION}
    for f in dataclasses.fields(cfg):
        section = getattr(cfg, f.name)
        out[f.name] = {sf.name: _plain(getattr(section, sf.name))
                       for sf in dataclasses.fields(section)}
    return out


def from_dict(doc):
    doc = dict(doc)
    version = doc.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config_version {version}")
    cfg = RunConfig()
    sections = {f.name: f.type for f in dataclasses.fields(cfg)}
    for name, payload in doc.items():
        if name not in sections:
            raise ValueError(f"unknown config section {name!r}")
        current = getattr(cfg, name)
        known = {f.name for f in dataclasses.fields(current)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
        setattr(cfg, name, type(current)(**payload))
    return cfg


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return from_dict(json.load(fh))

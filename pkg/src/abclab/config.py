"""Experiment configuration: flat key=value text, hashed canonically."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .engine import EnginePolicy
from .errors import RangeError

_TOLERANCE_KEYS = (
    "tol_conjugacy", "tol_det", "tol_seam", "tol_sigma", "tol_growth",
    "tol_mass", "tol_holoform", "tol_glue_det",
)


@dataclass
class ExperimentConfig:
    """Everything a run needs; all knobs overridable from the command line."""

    surface: str = "cylinder"
    stages: int = 3
    grid_n: int = 64
    seed: int = 20260809
    outdir: str = "runs/default"
    # integrator
    steps: int = 256
    newton_tol: float = 1e-14
    # induction policy
    stage1_eps: float = 0.10
    collar: float = 0.02
    curve_share: float = 0.66
    safety: float = 2.0
    # bump/glue layer
    bump_eta: float = 0.1
    bump_eps: float = 0.2
    amplitude: float = 0.05
    amplitude_decay: float = 0.5
    quad_n: int = 64
    glue_r: float = 1.5
    # structure tracking
    track_points: int = 12
    track_rho: float = 2.0
    track_band: float = 0.9
    # tolerance table
    tol_conjugacy: float = 1e-8
    tol_det: float = 1e-6
    tol_seam: float = 1e-6
    tol_sigma: float = 1e-10
    tol_growth: float = 1e-6
    tol_mass: float = 1e-8
    tol_holoform: float = 1e-5
    tol_glue_det: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.surface not in ("cylinder", "sphere", "disk"):
            raise RangeError(f"unknown surface {self.surface!r}")
        if self.stages < 1:
            raise RangeError("stage count must be >= 1")
        if self.grid_n < 16:
            raise RangeError("grid resolution must be >= 16")
        if not 0.0 < self.bump_eta < self.bump_eps < 1.0:
            raise RangeError("bump parameters need 0 < eta < eps < 1")
        for key in _TOLERANCE_KEYS:
            if getattr(self, key) <= 0.0:
                raise RangeError(f"{key} must be positive")
        if self.amplitude <= 0.0 or not 0.0 < self.amplitude_decay < 1.0:
            raise RangeError("amplitude schedule needs amplitude > 0 and "
                             "0 < decay < 1")

    def engine_policy(self) -> EnginePolicy:
        return EnginePolicy(grid_n=self.grid_n, base_steps=self.steps,
                            newton_tol=self.newton_tol,
                            stage1_eps=self.stage1_eps, collar=self.collar,
                            curve_share=self.curve_share, safety=self.safety,
                            stages_planned=self.stages)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = parse_key_values(text)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, raw in values.items():
            if key not in known:
                raise RangeError(f"unknown config key {key!r}")
            default = getattr(cls, key)   # dataclass defaults live on the class
            kind = type(default)
            if kind is bool:
                kwargs[key] = str(raw).lower() in ("1", "true", "yes")
            elif kind is int:
                kwargs[key] = int(raw)
            elif kind is float:
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)

    def hash(self) -> str:
        """Stable under key reordering: hash of the sorted key=value lines."""
        lines = sorted(
            f"{f.name}={_canon(getattr(self, f.name))}" for f in fields(self))
        digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
        return digest[:16]


def _canon(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def parse_key_values(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RangeError(f"malformed config line {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out

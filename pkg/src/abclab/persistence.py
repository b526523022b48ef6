"""Stage records, run manifests, orbit export: line-oriented text, resumable.

Every float is written with 17 significant digits and parses back to the
identical double; angles and base points are exact rationals (or the dyadic
shifted form); the conjugator stack is embedded as a serialized map
expression, so a reloaded record continues a run bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, parse_key_values
from .engine import SchemeStage, angle_str, parse_angle
from .errors import MissingStage, RangeError
from .maps import deserialize, serialize

RECORD_HEADER = "# abclab stage record v1"
MANIFEST_HEADER = "# abclab run manifest v1"


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _flatten(prefix: str, value, out: list) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}", v, out)
    elif isinstance(value, bool):
        out.append(f"{prefix} = {int(value)}")
    elif isinstance(value, (int, float)):
        out.append(f"{prefix} = {_fmt(value)}")
    elif isinstance(value, Fraction):
        out.append(f"{prefix} = {value.numerator}/{value.denominator}")
    else:
        out.append(f"{prefix} = {value}")


def stage_record_text(stage: SchemeStage) -> str:
    lines = [RECORD_HEADER,
             f"n = {stage.n}",
             f"alpha = {angle_str(stage.alpha)}",
             f"j = {stage.j}",
             f"N = {stage.orbit_len}",
             f"nu = {stage.nu if stage.nu is not None else 'none'}",
             f"nu_log2 = {_fmt(stage.nu_log2) if stage.nu_log2 is not None else 'none'}",
             f"epsilon = {_fmt(stage.epsilon)}",
             f"theta0 = {stage.theta0}"]
    cert_lines: list = []
    _flatten("cert", stage.certificates, cert_lines)
    lines.extend(sorted(cert_lines))
    map_text = serialize(stage.conjugator)
    map_lines = map_text.splitlines()
    lines.append(f"map conjugator {len(map_lines)}")
    lines.extend(map_lines)
    return "\n".join(lines) + "\n"


def parse_stage_record(text: str) -> SchemeStage:
    lines = text.splitlines()
    if not lines or lines[0] != RECORD_HEADER:
        raise RangeError("not a stage record")
    kv: dict = {}
    certificates: dict = {}
    conjugator = None
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("map conjugator "):
            count = int(line.split()[-1])
            conjugator = deserialize("\n".join(lines[i + 1:i + 1 + count]))
            i += 1 + count
            continue
        if "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
            if key.startswith("cert."):
                _insert_nested(certificates, key[5:].split("."), val)
            else:
                kv[key] = val
        i += 1
    if conjugator is None:
        raise RangeError("stage record lacks the conjugator map")
    nu = None if kv["nu"] == "none" else Fraction(kv["nu"])
    nu_log2 = None if kv["nu_log2"] == "none" else float(kv["nu_log2"])
    return SchemeStage(
        n=int(kv["n"]),
        alpha=parse_angle(kv["alpha"]),
        conjugator=conjugator,
        j=int(kv["j"]),
        orbit_len=int(kv["N"]),
        nu=nu,
        nu_log2=nu_log2,
        epsilon=float(kv["epsilon"]),
        theta0=Fraction(kv["theta0"]),
        certificates=certificates,
    )


def _insert_nested(d: dict, path: list, raw: str) -> None:
    for key in path[:-1]:
        d = d.setdefault(key, {})
    d[path[-1]] = _parse_scalar(raw)


def _parse_scalar(raw: str):
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


@dataclass
class RunManifest:
    """Completion state of a run directory."""

    config_hash: str
    version: str = __version__
    stage_files: list = field(default_factory=list)
    status: str = "incomplete"

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER,
                 f"config_hash = {self.config_hash}",
                 f"version = {self.version}",
                 f"status = {self.status}"]
        for name in self.stage_files:
            lines.append(f"stage = {name}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        if not text.startswith(MANIFEST_HEADER):
            raise RangeError("not a run manifest")
        stages = []
        kv = {}
        for line in text.splitlines()[1:]:
            if not line.strip() or "=" not in line:
                continue
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "stage":
                stages.append(val)
            else:
                kv[key] = val
        return cls(config_hash=kv.get("config_hash", ""),
                   version=kv.get("version", ""), stage_files=stages,
                   status=kv.get("status", "incomplete"))


class RunDirectory:
    """Single-writer layout: config.txt, manifest.txt, stage_####.txt, reports/."""

    def __init__(self, path):
        self.path = Path(path)

    def stage_path(self, n: int) -> Path:
        return self.path / f"stage_{n:04d}.txt"

    def write_stage(self, stage: SchemeStage) -> Path:
        p = self.stage_path(stage.n)
        p.write_text(stage_record_text(stage))
        return p

    def load_stage(self, n: int) -> SchemeStage:
        p = self.stage_path(n)
        if not p.exists():
            raise MissingStage(f"no record for stage {n} in {self.path}")
        return parse_stage_record(p.read_text())

    def existing_stages(self) -> list:
        out = []
        n = 0
        while self.stage_path(n).exists():
            out.append(n)
            n += 1
        return out

    def write_manifest(self, manifest: RunManifest) -> None:
        (self.path / "manifest.txt").write_text(manifest.to_text())

    def load_manifest(self) -> RunManifest:
        p = self.path / "manifest.txt"
        if not p.exists():
            raise MissingStage(f"no manifest in {self.path}")
        return RunManifest.from_text(p.read_text())

    def load_config(self) -> ExperimentConfig:
        p = self.path / "config.txt"
        if not p.exists():
            raise MissingStage(f"no config in {self.path}")
        return ExperimentConfig.from_dict(parse_key_values(p.read_text()))

    def report_path(self, name: str) -> Path:
        d = self.path / "reports"
        d.mkdir(parents=True, exist_ok=True)
        return d / name


def run(config: ExperimentConfig, resume: bool = True,
        progress=None) -> RunManifest:
    """Execute the staged induction, persisting each record before the next.

    Identical configs produce byte-identical records; an interrupted run
    resumes from the last persisted stage.
    """
    from .engine import initial_stage, step

    rd = RunDirectory(config.outdir)
    rd.path.mkdir(parents=True, exist_ok=True)
    (rd.path / "config.txt").write_text(config.to_text())
    policy = config.engine_policy()
    manifest = RunManifest(config_hash=config.hash())

    stages = [initial_stage()]
    if resume:
        for n in rd.existing_stages():
            if n == 0:
                continue
            stages.append(rd.load_stage(n))
    if len(stages) == 1:
        rd.write_stage(stages[0])
    manifest.stage_files = [rd.stage_path(s.n).name for s in stages]
    rd.write_manifest(manifest)
    while stages[-1].n < config.stages:
        nxt = step(stages[-1], policy)
        rd.write_stage(nxt)
        stages.append(nxt)
        manifest.stage_files.append(rd.stage_path(nxt.n).name)
        rd.write_manifest(manifest)
        if progress is not None:
            progress(nxt)
    manifest.status = "complete"
    rd.write_manifest(manifest)
    return manifest


def export_orbit(run_dir, stage_n: int, start_theta: float, start_y: float,
                 length: int, out_path) -> Path:
    """Write an orbit segment as plot-ready text, one iterate per line.

    Columns: k, theta, y, and the lifted surface coordinates when the run
    targets the sphere or disk; floats carry 17 significant digits.
    """
    if length < 1:
        raise RangeError("orbit export needs length >= 1")
    rd = RunDirectory(run_dir)
    cfg = rd.load_config()
    stage = rd.load_stage(stage_n)
    policy = cfg.engine_policy()
    f = stage.stage_map()
    from .maps import evaluate_batch

    th = np.array([float(start_theta) % 1.0])
    yy = np.array([float(start_y)])
    rows = []
    for k in range(length):
        rows.append((k, th[0], yy[0]))
        if k + 1 < length:
            th, yy = evaluate_batch(f, th, yy, policy.flow_config)
    out_path = Path(out_path)
    lines = [f"# abclab orbit export stage={stage_n}",
             f"# alpha = {angle_str(stage.alpha)}",
             f"# j = {stage.j}  N = {stage.orbit_len}",
             f"# surface = {cfg.surface}",
             f"# columns = k theta y" + (" x1 x2 x3" if cfg.surface == "sphere"
                                         else " x1 x2" if cfg.surface == "disk"
                                         else "")]
    for k, t, y in rows:
        extra = ""
        if cfg.surface == "sphere":
            yc = min(max(y, -1.0), 1.0)
            r = math.sqrt(max(1.0 - yc * yc, 0.0))
            extra = (f" {_fmt(r * math.cos(2 * math.pi * t))}"
                     f" {_fmt(r * math.sin(2 * math.pi * t))} {_fmt(yc)}")
        elif cfg.surface == "disk":
            yc = min(max(y, -1.0), 1.0)
            r = math.sqrt((yc + 1.0) / 2.0)
            extra = (f" {_fmt(r * math.cos(2 * math.pi * t))}"
                     f" {_fmt(r * math.sin(2 * math.pi * t))}")
        lines.append(f"{k} {_fmt(t)} {_fmt(y)}{extra}")
    out_path.write_text("\n".join(lines) + "\n")
    return out_path


def read_orbit(path) -> np.ndarray:
    """Parse an exported orbit back; floats round-trip exactly."""
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        rows.append([float(p) for p in parts])
    return np.array(rows)

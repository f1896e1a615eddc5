"""Run configuration: a flat key-value text format with strict round-tripping.

Every artifact directory carries a snapshot sufficient to reproduce the run:
the experiment knobs, the seed, and a version stamp. Unknown keys are
rejected on load so stale snapshots fail loudly instead of silently.
"""

from __future__ import annotations

import dataclasses
import subprocess
from dataclasses import dataclass, fields

from . import __version__
from .rl.loops import TrainConfig


@dataclass
class RunConfig:
    env: str = "CartPole-V"
    cell: str = "grsn"
    tap: bool = True
    t_inner: int = 4
    seed: int = 0
    steps: int = 10_000
    lr: float = 3e-4
    gamma: float = 0.9
    tau: float = 0.005
    batch_size: int = 32
    seq_len: int = 64
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    updates_per_step: float = 1.0
    eval_interval_episodes: int = 1
    eval_episodes: int = 10
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    explore_noise: float = 0.1
    target_entropy_scale: float = 0.98
    version: str = ""
    git_commit: str = ""

    def stamped(self) -> "RunConfig":
        return dataclasses.replace(self, version=__version__, git_commit=_git_commit())

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        kwargs = {f.name: getattr(self, f.name) for f in fields(self) if f.name in names}
        return TrainConfig(**kwargs)

    def to_text(self) -> str:
        lines = ["# tapsnn run config"]
        for f in fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "RunConfig":
        typed = {f.name: f.type for f in fields(RunConfig)}
        field_types = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in typed:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse(value, field_types[key], key)
        return RunConfig(**kwargs)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str, kind: type, key: str):
    if kind is bool:
        if value not in ("true", "false"):
            raise ValueError(f"{key}: expected true/false, got {value!r}")
        return value == "true"
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def _git_commit() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"

"""Trajectory container and the on-disk episode/dataset format.

Indexing convention: row ``t`` of ``weather`` and ``action`` is what drove
hour ``t``; row ``t`` of ``climate`` and ``growth`` is the state *after* that
hour. The state before the first step lives in ``climate0``/``growth0``/``fw0``.
``daily_yield[d]`` is the cumulative fresh weight after the day boundary that
closes day ``d`` of the trajectory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .domain import EconomicLedger

FORMAT_VERSION = 1


class TrajectoryFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    weather: np.ndarray  # (T, 6)
    climate: np.ndarray  # (T, 4)
    growth: np.ndarray  # (T, 3)
    action: np.ndarray  # (T, 4)
    reward: np.ndarray  # (T,)
    daily_yield: np.ndarray  # (D,)
    climate0: np.ndarray
    growth0: np.ndarray
    fw0: float = 0.0
    start: int = 0
    ledger: EconomicLedger = field(default_factory=EconomicLedger)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.reward.shape[0])

    @property
    def horizon(self) -> int:
        return len(self)

    @property
    def n_days(self) -> int:
        return int(self.daily_yield.shape[0])

    @property
    def net_profit_curve(self) -> np.ndarray:
        """Cumulative net profit after every step (gamma = 1 return)."""
        return np.cumsum(self.reward)

    @property
    def fw(self) -> np.ndarray:
        """Cumulative fresh weight after every hour."""
        out = np.full(len(self), self.fw0)
        for k, step in enumerate(self.boundary_steps()):
            out[step:] = self.daily_yield[k]
        return out

    def boundary_steps(self) -> np.ndarray:
        """Step indices after which a daily harvest is booked."""
        t = np.arange(len(self))
        return t[(self.start + t + 1) % 24 == 0]

    def prefix(self, n: int) -> "Trajectory":
        """First ``n`` steps, unfinalized ledger left as recorded in metadata."""
        n_days = int(np.sum((self.start + np.arange(n) + 1) % 24 == 0))
        return Trajectory(
            weather=self.weather[:n],
            climate=self.climate[:n],
            growth=self.growth[:n],
            action=self.action[:n],
            reward=self.reward[:n],
            daily_yield=self.daily_yield[:n_days],
            climate0=self.climate0,
            growth0=self.growth0,
            fw0=self.fw0,
            start=self.start,
            ledger=self.ledger,
            metadata=dict(self.metadata),
        )

    # ------------------------------------------------------------------ json

    def to_json(self) -> dict[str, Any]:
        return {
            "version": FORMAT_VERSION,
            "start": int(self.start),
            "weather": self.weather.tolist(),
            "climate": self.climate.tolist(),
            "growth": self.growth.tolist(),
            "action": self.action.tolist(),
            "reward": self.reward.tolist(),
            "daily_yield": self.daily_yield.tolist(),
            "initial": {
                "climate": self.climate0.tolist(),
                "growth": self.growth0.tolist(),
                "fw": float(self.fw0),
            },
            "ledger": self.ledger.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "Trajectory":
        if doc.get("version") != FORMAT_VERSION:
            raise TrajectoryFormatError(f"unsupported trajectory version {doc.get('version')!r}")
        try:
            T = len(doc["reward"])

            def arr(key: str, width: int) -> np.ndarray:
                a = np.asarray(doc[key], dtype=float).reshape(T, width)
                return a

            return cls(
                weather=arr("weather", 6),
                climate=arr("climate", 4),
                growth=arr("growth", 3),
                action=arr("action", 4),
                reward=np.asarray(doc["reward"], dtype=float),
                daily_yield=np.asarray(doc["daily_yield"], dtype=float),
                climate0=np.asarray(doc["initial"]["climate"], dtype=float),
                growth0=np.asarray(doc["initial"]["growth"], dtype=float),
                fw0=float(doc["initial"]["fw"]),
                start=int(doc.get("start", 0)),
                ledger=EconomicLedger.from_dict(doc["ledger"]),
                metadata=doc.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TrajectoryFormatError(f"malformed trajectory: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.dumps())
        except OSError as exc:
            raise OSError(f"cannot write trajectory {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise OSError(f"cannot read trajectory {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise TrajectoryFormatError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_json(doc)


def schedule_digest(actions: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(actions, dtype=float).tobytes()).hexdigest()


@dataclass
class Dataset:
    """Ordered collection of trajectories plus provenance."""

    episodes: list[Trajectory]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.episodes)

    def __getitem__(self, i: int) -> Trajectory:
        return self.episodes[i]

    @property
    def n_transitions(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def extend(self, more: Sequence[Trajectory]) -> "Dataset":
        return Dataset(list(self.episodes) + list(more), dict(self.metadata))

    def digest(self) -> str:
        h = hashlib.sha256()
        for ep in self.episodes:
            h.update(ep.digest().encode())
        return h.hexdigest()

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create dataset directory {directory}: {exc}") from exc
        files = []
        for i, ep in enumerate(self.episodes):
            name = f"episode_{i:05d}.json"
            ep.save(directory / name)
            files.append({"file": name, "sha256": ep.digest(), "steps": len(ep)})
        manifest = {"version": FORMAT_VERSION, "episodes": files, "metadata": self.metadata}
        (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "Dataset":
        directory = Path(directory)
        mpath = directory / "manifest.json"
        try:
            manifest = json.loads(mpath.read_text())
        except OSError as exc:
            raise OSError(f"cannot read dataset manifest {mpath}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise TrajectoryFormatError(f"{mpath}: not valid JSON ({exc})") from exc
        if manifest.get("version") != FORMAT_VERSION:
            raise TrajectoryFormatError(f"unsupported dataset version {manifest.get('version')!r}")
        eps = [Trajectory.load(directory / entry["file"]) for entry in manifest["episodes"]]
        return cls(eps, manifest.get("metadata", {}))

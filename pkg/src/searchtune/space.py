"""Hyperparameter search space, sampled configurations, trials, and the
observation dataset shared by samplers and the study pipeline."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
GRID = "grid"

MAXIMIZE = "maximize"
MINIMIZE = "minimize"


@dataclass(frozen=True)
class ParamSpec:
    """One dimension of the search space.

    ``kind`` selects the domain: a continuous or integer range [lo, hi]
    (optionally log-scaled), a categorical choice list, or an explicit grid
    of points.
    """

    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    choices: tuple[Any, ...] | None = None
    points: tuple[Any, ...] | None = None
    scale: str = "linear"

    @classmethod
    def continuous(cls, name: str, lo: float, hi: float, scale: str = "linear") -> "ParamSpec":
        return cls(name=name, kind=CONTINUOUS, lo=float(lo), hi=float(hi), scale=scale)

    @classmethod
    def integer(cls, name: str, lo: int, hi: int, scale: str = "linear") -> "ParamSpec":
        return cls(name=name, kind=INTEGER, lo=int(lo), hi=int(hi), scale=scale)

    @classmethod
    def categorical(cls, name: str, choices: Iterable[Any]) -> "ParamSpec":
        return cls(name=name, kind=CATEGORICAL, choices=tuple(choices))

    @classmethod
    def grid(cls, name: str, points: Iterable[Any]) -> "ParamSpec":
        return cls(name=name, kind=GRID, points=tuple(points))

    @property
    def values(self) -> tuple[Any, ...]:
        """Choice list for categorical/grid params."""
        if self.kind == CATEGORICAL:
            return self.choices or ()
        if self.kind == GRID:
            return self.points or ()
        raise ValueError(f"param {self.name!r} has no enumerable values")

    def violations(self) -> list[str]:
        errs = []
        if not self.name:
            errs.append("param name must be non-empty")
        if self.kind in (CONTINUOUS, INTEGER):
            if self.lo is None or self.hi is None:
                errs.append(f"{self.name}: range params need lo and hi")
            elif not (self.lo < self.hi):
                errs.append(f"{self.name}: lo < hi violated (lo={self.lo}, hi={self.hi})")
            if self.scale not in ("linear", "log"):
                errs.append(f"{self.name}: unknown scale {self.scale!r}")
            elif self.scale == "log" and self.lo is not None and self.lo <= 0:
                errs.append(f"{self.name}: log scale requires lo > 0 (lo={self.lo})")
        elif self.kind == CATEGORICAL:
            if not self.choices:
                errs.append(f"{self.name}: categorical choices must be non-empty")
            elif len(set(self.choices)) != len(self.choices):
                errs.append(f"{self.name}: categorical choices must be unique")
        elif self.kind == GRID:
            if not self.points:
                errs.append(f"{self.name}: grid points must be non-empty")
            elif len(set(self.points)) != len(self.points):
                errs.append(f"{self.name}: grid points must be unique")
        else:
            errs.append(f"{self.name}: unknown param kind {self.kind!r}")
        return errs

    def contains(self, value: Any) -> bool:
        if self.kind == CONTINUOUS:
            return isinstance(value, (int, float)) and self.lo <= float(value) <= self.hi
        if self.kind == INTEGER:
            return (
                isinstance(value, (int, np.integer))
                and not isinstance(value, bool)
                and self.lo <= int(value) <= self.hi
            )
        return value in self.values


@dataclass(frozen=True)
class SearchSpace:
    """Ordered collection of ParamSpecs; the order fixes serialization."""

    params: tuple[ParamSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))

    def __iter__(self) -> Iterator[ParamSpec]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def get(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def require_valid(self) -> "SearchSpace":
        errs = validate_space(self)
        if errs:
            raise ConfigError("invalid search space: " + "; ".join(errs))
        return self


def validate_space(space: SearchSpace) -> list[str]:
    """Collect every invariant violation; an empty list means the space is ok."""
    errs: list[str] = []
    if not space.params:
        errs.append("search space needs at least one parameter")
    seen = set()
    for p in space.params:
        if p.name in seen:
            errs.append(f"duplicate param name {p.name!r}")
        seen.add(p.name)
        errs.extend(p.violations())
    return errs


@dataclass(frozen=True)
class HPConfig:
    """One sampled point: a full assignment of values to the space's params."""

    assignments: Mapping[str, Any]

    def __getitem__(self, name: str) -> Any:
        return self.assignments[name]

    def __contains__(self, name: str) -> bool:
        return name in self.assignments

    def violations(self, space: SearchSpace) -> list[str]:
        errs = []
        for p in space:
            if p.name not in self.assignments:
                errs.append(f"missing assignment for {p.name!r}")
            elif not p.contains(self.assignments[p.name]):
                errs.append(f"value {self.assignments[p.name]!r} outside domain of {p.name!r}")
        extra = set(self.assignments) - set(space.names)
        for name in sorted(extra):
            errs.append(f"assignment for unknown param {name!r}")
        return errs


@dataclass(frozen=True)
class Trial:
    """One evaluated configuration with its objective vector."""

    id: int
    stage: int
    config: HPConfig
    objective_values: tuple[float, ...]
    provenance: str = "sampled"  # sampled | seeded

    def __post_init__(self):
        object.__setattr__(self, "objective_values", tuple(float(v) for v in self.objective_values))
        if not all(math.isfinite(v) for v in self.objective_values):
            raise ValueError(f"trial {self.id}: objective values must be finite")
        if self.provenance not in ("sampled", "seeded"):
            raise ValueError(f"trial {self.id}: unknown provenance {self.provenance!r}")


class ObservationDataset:
    """Append-only, id-ordered store of trials.

    Appends are serialized by the study loop; seeded trials of a stage must
    precede its sampled trials.
    """

    def __init__(self, trials: Iterable[Trial] = ()):
        self.trials: list[Trial] = []
        for t in trials:
            self.append(t)

    def append(self, trial: Trial) -> None:
        if self.trials:
            last = self.trials[-1]
            if trial.id <= last.id:
                raise ValueError(f"trial ids must be strictly increasing ({trial.id} after {last.id})")
            if (
                trial.stage == last.stage
                and trial.provenance == "seeded"
                and last.provenance == "sampled"
            ):
                raise ValueError("seeded trials must precede sampled trials within a stage")
            if self.trials[0].objective_values and len(trial.objective_values) != len(
                self.trials[0].objective_values
            ):
                raise ValueError("all trials must share the same number of objectives")
        self.trials.append(trial)

    def extend(self, trials: Iterable[Trial]) -> None:
        for t in trials:
            self.append(t)

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self) -> Iterator[Trial]:
        return iter(self.trials)

    def __getitem__(self, i: int) -> Trial:
        return self.trials[i]

    @property
    def next_id(self) -> int:
        return self.trials[-1].id + 1 if self.trials else 0

    def values_matrix(self) -> np.ndarray:
        """(n_trials, M) raw objective values."""
        if not self.trials:
            return np.zeros((0, 0))
        return np.array([t.objective_values for t in self.trials], dtype=np.float64)


def canonical_matrix(values: np.ndarray, directions: Sequence[str]) -> np.ndarray:
    """Orient every objective so that larger is better (maximize convention)."""
    out = np.array(values, dtype=np.float64, copy=True)
    for m, d in enumerate(directions):
        if d == MINIMIZE:
            out[:, m] = -out[:, m]
        elif d != MAXIMIZE:
            raise ValueError(f"unknown direction {d!r}")
    return out


def pareto_front(dataset: ObservationDataset, directions: Sequence[str]) -> list[Trial]:
    """Non-dominated trials, in trial-id order.

    A trial dominates another iff it is at least as good on every objective
    and strictly better on at least one (after direction normalization).
    """
    if len(dataset) == 0:
        return []
    values = dataset.values_matrix()
    if values.shape[1] != len(directions):
        raise ValueError("directions length must match objective count")
    c = canonical_matrix(values, directions)
    n = c.shape[0]
    keep = []
    for i in range(n):
        dominated = False
        for j in range(n):
            if j == i:
                continue
            if np.all(c[j] >= c[i]) and np.any(c[j] > c[i]):
                dominated = True
                break
        if not dominated:
            keep.append(dataset[i])
    return keep


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> HPConfig:
    """Draw each parameter independently and uniformly over its domain
    (uniform in log space for log-scaled ranges)."""
    values: dict[str, Any] = {}
    for p in space:
        if p.kind == CONTINUOUS:
            if p.scale == "log":
                values[p.name] = float(np.exp(rng.uniform(np.log(p.lo), np.log(p.hi))))
            else:
                values[p.name] = float(rng.uniform(p.lo, p.hi))
        elif p.kind == INTEGER:
            if p.scale == "log":
                raw = np.exp(rng.uniform(np.log(p.lo), np.log(p.hi)))
                values[p.name] = int(np.clip(round(raw), p.lo, p.hi))
            else:
                values[p.name] = int(rng.integers(p.lo, p.hi + 1))
        else:
            opts = p.values
            values[p.name] = opts[int(rng.integers(0, len(opts)))]
    return HPConfig(values)


def as_grid(space: SearchSpace, resolution: int) -> SearchSpace:
    """Replace range params with explicit grids of ``resolution`` points
    (geometric spacing for log scale); categorical/grid params pass through."""
    if resolution < 1:
        raise ConfigError("grid resolution must be >= 1")
    params = []
    for p in space:
        if p.kind == CONTINUOUS:
            if p.scale == "log":
                pts = np.geomspace(p.lo, p.hi, resolution)
            else:
                pts = np.linspace(p.lo, p.hi, resolution)
            params.append(ParamSpec.grid(p.name, (float(v) for v in pts)))
        elif p.kind == INTEGER:
            if p.scale == "log":
                pts = np.geomspace(p.lo, p.hi, resolution)
            else:
                pts = np.linspace(p.lo, p.hi, resolution)
            ints = sorted({int(np.clip(round(v), p.lo, p.hi)) for v in pts})
            params.append(ParamSpec.grid(p.name, ints))
        else:
            params.append(p)
    return SearchSpace(tuple(params))


def trial_to_dict(trial: Trial) -> dict:
    """JSON form with fixed field order: id, stage, config, objective_values, provenance."""
    return {
        "id": trial.id,
        "stage": trial.stage,
        "config": dict(trial.config.assignments),
        "objective_values": list(trial.objective_values),
        "provenance": trial.provenance,
    }


def trial_from_dict(d: Mapping[str, Any]) -> Trial:
    return Trial(
        id=int(d["id"]),
        stage=int(d["stage"]),
        config=HPConfig(dict(d["config"])),
        objective_values=tuple(float(v) for v in d["objective_values"]),
        provenance=str(d["provenance"]),
    )


def dump_trials(trials: Iterable[Trial], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(json.dumps(trial_to_dict(t)) + "\n")


def load_trials(path: str | Path) -> list[Trial]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(trial_from_dict(json.loads(line)))
    return out

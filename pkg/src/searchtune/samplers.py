"""Proposal strategies: uniform random, grid enumeration, and the
multi-objective tree-structured Parzen estimator.

TPE splits past observations per objective at a quantile threshold into a
"good" and "bad" set, fits an independent per-parameter Parzen density to
each side, draws candidates from a good-side density, and proposes the
candidate with the largest summed log density ratio (the log of the
product-of-ratios improvement score). In weighted-sum mode the objective
vector is first reduced to one scalar and the same machinery runs with a
single criterion.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .errors import ConfigError, GridExhausted
from .space import (
    CATEGORICAL,
    GRID,
    INTEGER,
    MAXIMIZE,
    MINIMIZE,
    HPConfig,
    ObservationDataset,
    ParamSpec,
    SearchSpace,
    canonical_matrix,
    sample_uniform,
)


@dataclass(frozen=True)
class TPESettings:
    """Knobs of the TPE proposal loop.

    ``bandwidth_floor`` is a fraction of the parameter's scale-space range;
    the kernel bandwidth is max(floor * range, range / n_observations).
    """

    gamma_quantile: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24
    bandwidth_floor: float = 1e-3
    categorical_prior: float = 1.0

    def violations(self) -> list[str]:
        errs = []
        if not 0.0 < self.gamma_quantile < 1.0:
            errs.append(f"gamma_quantile must be in (0,1), got {self.gamma_quantile}")
        if self.n_startup < 1:
            errs.append("n_startup must be >= 1")
        if self.n_candidates < 1:
            errs.append("n_candidates must be >= 1")
        if self.bandwidth_floor <= 0:
            errs.append("bandwidth_floor must be positive")
        if self.categorical_prior <= 0:
            errs.append("categorical_prior must be positive")
        return errs


@dataclass(frozen=True)
class ObjectiveMode:
    """Separate multi-objective TPE, or weighted-sum reduction to a scalar."""

    mode: str = "separate"  # separate | weighted_sum
    weights: tuple[float, ...] | None = None

    def violations(self) -> list[str]:
        errs = []
        if self.mode not in ("separate", "weighted_sum"):
            errs.append(f"unknown objective mode {self.mode!r}")
        if self.mode == "weighted_sum":
            if not self.weights:
                errs.append("weighted_sum mode requires weights")
            elif any(w < 0 for w in self.weights):
                errs.append("weights must be non-negative")
            elif not math.isclose(sum(self.weights), 1.0, rel_tol=1e-9, abs_tol=1e-9):
                errs.append(f"weights must sum to 1, got {sum(self.weights)}")
        return errs


def weighted_sum_reduce(
    z: Sequence[float], weights: Sequence[float], directions: Sequence[str]
) -> float:
    """Weighted score oriented so that larger is better.

    Minimized objectives enter with flipped sign; maximized objectives enter
    raw, so the reported score keeps the natural orientation of retrieval
    metrics. Sampler-internal math negates this to its minimize convention.
    """
    if len(z) != len(weights) or len(z) != len(directions):
        raise ValueError(
            f"length mismatch: |z|={len(z)}, |weights|={len(weights)}, |directions|={len(directions)}"
        )
    total = 0.0
    for v, w, d in zip(z, weights, directions):
        total += w * (v if d == MAXIMIZE else -v)
    return float(total)


def tpe_split(
    values: Sequence[float], v: float, direction: str
) -> tuple[float, np.ndarray, np.ndarray]:
    """Quantile split of one objective's observations.

    Values are canonicalized to the minimize convention; gamma is the
    ``v``-quantile with linear interpolation on the sorted sequence. Returns
    (gamma, good indices, bad indices) with gamma in canonical space; the
    good set (canonical value <= gamma) is never empty.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("tpe_split needs at least one value")
    canon = vals if direction == MINIMIZE else -vals
    gamma = float(np.quantile(canon, v))
    good = np.flatnonzero(canon <= gamma)
    bad = np.flatnonzero(canon > gamma)
    if good.size == 0:  # numerical guard; the quantile is >= the minimum
        best = int(np.argmin(canon))
        good = np.array([best], dtype=np.intp)
        bad = np.array([i for i in range(canon.size) if i != best], dtype=np.intp)
    return gamma, good, bad


class _Density(ABC):
    """Per-parameter density with sampling and log-density evaluation."""

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def log_density_many(self, values: Sequence[Any]) -> np.ndarray: ...

    def log_density(self, value: Any) -> float:
        return float(self.log_density_many([value])[0])


class TruncGaussMixture(_Density):
    """Equal-weight mixture of truncated Gaussians, one per observation.

    Operates in the parameter's scale space (log-transformed for log scale);
    the native-space log density includes the change-of-variables term so
    that it integrates to one over [lo, hi].
    """

    def __init__(self, param: ParamSpec, centers_scale: np.ndarray, sigma: float):
        self.param = param
        self.log_scale = param.scale == "log"
        self.slo = math.log(param.lo) if self.log_scale else float(param.lo)
        self.shi = math.log(param.hi) if self.log_scale else float(param.hi)
        self.centers = np.asarray(centers_scale, dtype=np.float64)
        self.sigma = float(sigma)

    def sample(self, rng: np.random.Generator) -> Any:
        i = int(rng.integers(0, self.centers.shape[0]))
        mu = self.centers[i]
        fa = ndtr((self.slo - mu) / self.sigma)
        fb = ndtr((self.shi - mu) / self.sigma)
        u = rng.random()
        x = mu + self.sigma * ndtri(fa + u * (fb - fa))
        x = min(max(x, self.slo), self.shi)
        native = math.exp(x) if self.log_scale else x
        if self.param.kind == INTEGER:
            return int(np.clip(round(native), self.param.lo, self.param.hi))
        return float(min(max(native, self.param.lo), self.param.hi))

    def log_density_many(self, values: Sequence[Any]) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        out = np.full(arr.shape, -np.inf)
        ok = (arr >= self.param.lo) & (arr <= self.param.hi)
        if np.any(ok):
            x = np.log(arr[ok]) if self.log_scale else arr[ok]
            dens = kernels.tgm_logpdf(
                np.ascontiguousarray(x), self.centers, self.sigma, self.slo, self.shi
            )
            if self.log_scale:
                dens = dens - x  # d(log v)/dv = 1/v
            out[ok] = dens
        return out


class CategoricalDensity(_Density):
    """Smoothed category frequencies over a categorical/grid value list."""

    def __init__(self, param: ParamSpec, probs: np.ndarray):
        self.param = param
        self.values = param.values
        self.probs = np.asarray(probs, dtype=np.float64)
        self._cum = np.cumsum(self.probs)
        self._index = {v: i for i, v in enumerate(self.values)}

    def sample(self, rng: np.random.Generator) -> Any:
        u = rng.random()
        return self.values[int(np.searchsorted(self._cum, u, side="right"))]

    def log_density_many(self, values: Sequence[Any]) -> np.ndarray:
        out = np.empty(len(values))
        for i, v in enumerate(values):
            idx = self._index.get(v)
            out[i] = -np.inf if idx is None else np.log(self.probs[idx])
        return out


class UniformDensity(_Density):
    """Uniform density over a parameter's domain.

    Stands in for a Parzen fit when a split side has no observations.
    """

    def __init__(self, param: ParamSpec):
        self.param = param

    def sample(self, rng: np.random.Generator) -> Any:
        return sample_uniform(SearchSpace((self.param,)), rng)[self.param.name]

    def log_density_many(self, values: Sequence[Any]) -> np.ndarray:
        p = self.param
        if p.kind in (CATEGORICAL, GRID):
            logp = -math.log(len(p.values))
            return np.array([logp if v in p.values else -np.inf for v in values])
        arr = np.asarray(values, dtype=np.float64)
        out = np.full(arr.shape, -np.inf)
        ok = (arr >= p.lo) & (arr <= p.hi)
        if p.scale == "log":
            span = math.log(p.hi) - math.log(p.lo)
            out[ok] = -math.log(span) - np.log(arr[ok])
        else:
            out[ok] = -math.log(p.hi - p.lo)
        return out


def parzen_fit(configs: Sequence[HPConfig], param: ParamSpec, settings: TPESettings) -> _Density:
    """Fit the per-parameter Parzen density to the observed values.

    Continuous/integer params get a truncated-Gaussian kernel per observed
    value with bandwidth max(floor * range, range / n) in scale space;
    categorical and grid params get additively smoothed frequencies.
    """
    if not configs:
        raise ValueError("parzen_fit needs at least one config")
    observed = [c[param.name] for c in configs]
    if param.kind in (CATEGORICAL, GRID):
        values = param.values
        counts = np.zeros(len(values))
        index = {v: i for i, v in enumerate(values)}
        for v in observed:
            counts[index[v]] += 1
        probs = (counts + settings.categorical_prior) / (
            len(observed) + settings.categorical_prior * len(values)
        )
        return CategoricalDensity(param, probs)
    log_scale = param.scale == "log"
    centers = np.array(
        [math.log(v) if log_scale else float(v) for v in observed], dtype=np.float64
    )
    span = (math.log(param.hi) - math.log(param.lo)) if log_scale else (param.hi - param.lo)
    sigma = max(settings.bandwidth_floor * span, span / len(observed))
    return TruncGaussMixture(param, centers, sigma)


class ConfigDensity:
    """Product of independent per-parameter densities over a search space."""

    def __init__(self, space: SearchSpace, models: Mapping[str, _Density]):
        self.space = space
        self.models = models

    @classmethod
    def fit(
        cls, configs: Sequence[HPConfig], space: SearchSpace, settings: TPESettings
    ) -> "ConfigDensity":
        """Parzen fit per param; with no observations, uniform over the domain."""
        models: dict[str, _Density] = {}
        for p in space:
            models[p.name] = parzen_fit(configs, p, settings) if configs else UniformDensity(p)
        return cls(space, models)

    def sample(self, rng: np.random.Generator) -> HPConfig:
        return HPConfig({p.name: self.models[p.name].sample(rng) for p in self.space})

    def log_density_batch(self, configs: Sequence[HPConfig]) -> np.ndarray:
        total = np.zeros(len(configs))
        for p in self.space:
            total += self.models[p.name].log_density_many([c[p.name] for c in configs])
        return total


def score_candidates(
    candidates: Sequence[HPConfig], density_pairs: Sequence[tuple[ConfigDensity, ConfigDensity]]
) -> np.ndarray:
    """Improvement score per candidate: sum over criteria of log l - log g
    (the log of the product of density ratios)."""
    scores = np.zeros(len(candidates))
    for good, bad in density_pairs:
        scores += good.log_density_batch(candidates) - bad.log_density_batch(candidates)
    return scores


class Sampler(ABC):
    """Proposal strategy interface.

    ``next`` must be deterministic given (space, dataset, rng state) and must
    return an in-domain configuration. Strategies needing the observation
    history read it from the dataset; none mutate it.
    """

    name: str = "base"

    @abstractmethod
    def next(
        self,
        space: SearchSpace,
        dataset: ObservationDataset,
        directions: Sequence[str],
        rng: np.random.Generator,
    ) -> HPConfig: ...


class RandomSampler(Sampler):
    name = "random"

    def next(self, space, dataset, directions, rng):
        return sample_uniform(space, rng)


class GridSampler(Sampler):
    """Enumerates the Cartesian product of explicit point lists.

    The enumeration position is the count of sampled-provenance trials in
    the dataset, so the sampler itself is stateless; seeded warm-start
    trials do not consume grid cells. Raises GridExhausted after the last
    combination.
    """

    name = "grid"

    def next(self, space, dataset, directions, rng):
        sizes = []
        for p in space:
            if p.kind not in (GRID, CATEGORICAL):
                raise ConfigError(
                    f"grid sampler requires explicit points for every param; {p.name!r} is {p.kind}"
                )
            sizes.append(len(p.values))
        total = math.prod(sizes)
        idx = sum(1 for t in dataset if t.provenance == "sampled")
        if idx >= total:
            raise GridExhausted(f"grid of {total} combinations exhausted")
        digits = []
        rem = idx
        for size in reversed(sizes):
            digits.append(rem % size)
            rem //= size
        digits.reverse()
        return HPConfig({p.name: p.values[d] for p, d in zip(space, digits)})


class TPESampler(Sampler):
    name = "tpe"

    def __init__(self, settings: TPESettings = TPESettings(), mode: ObjectiveMode = ObjectiveMode()):
        errs = settings.violations() + mode.violations()
        if errs:
            raise ConfigError("invalid TPE configuration: " + "; ".join(errs))
        self.settings = settings
        self.mode = mode

    def next(self, space, dataset, directions, rng):
        st = self.settings
        if len(dataset) < st.n_startup:
            return sample_uniform(space, rng)
        values = dataset.values_matrix()
        if self.mode.mode == "weighted_sum":
            w = np.asarray(self.mode.weights, dtype=np.float64)
            if w.shape[0] != values.shape[1]:
                raise ConfigError(
                    f"weighted_sum weights have {w.shape[0]} entries for {values.shape[1]} objectives"
                )
            scalars = -(canonical_matrix(values, directions) @ w)
            criteria = [(scalars, MINIMIZE)]
        else:
            criteria = [(values[:, m], directions[m]) for m in range(values.shape[1])]

        density_pairs = []
        for vals_m, dir_m in criteria:
            _, good, bad = tpe_split(vals_m, st.gamma_quantile, dir_m)
            l_fit = ConfigDensity.fit([dataset[int(i)].config for i in good], space, st)
            g_fit = ConfigDensity.fit([dataset[int(i)].config for i in bad], space, st)
            density_pairs.append((l_fit, g_fit))

        generator = density_pairs[int(rng.integers(0, len(density_pairs)))][0]
        candidates = [generator.sample(rng) for _ in range(st.n_candidates)]
        scores = score_candidates(candidates, density_pairs)
        return candidates[int(np.argmax(scores))]  # first max wins ties


_SAMPLERS: dict[str, type[Sampler]] = {
    "random": RandomSampler,
    "grid": GridSampler,
    "tpe": TPESampler,
}


def register_sampler(name: str, cls: type[Sampler]) -> None:
    """Register an additional strategy (e.g. a GP or evolutionary sampler)."""
    _SAMPLERS[name] = cls


def make_sampler(
    name: str,
    settings: TPESettings | None = None,
    mode: ObjectiveMode | None = None,
) -> Sampler:
    cls = _SAMPLERS.get(name)
    if cls is None:
        raise ConfigError(f"unknown sampler {name!r} (available: {', '.join(sorted(_SAMPLERS))})")
    if cls is TPESampler:
        return TPESampler(settings or TPESettings(), mode or ObjectiveMode())
    return cls()

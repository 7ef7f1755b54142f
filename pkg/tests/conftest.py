import numpy as np
import pytest

from searchtune import kernels
from searchtune.space import HPConfig, ObservationDataset, ParamSpec, SearchSpace, Trial


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # pay the one-off JIT cost before any timed test runs
    kernels.warmup()


def random_space(rng: np.random.Generator) -> SearchSpace:
    """A small random space mixing all parameter kinds."""
    params = []
    n = int(rng.integers(1, 5))
    for i in range(n):
        kind = int(rng.integers(0, 4))
        name = f"p{i}"
        if kind == 0:
            lo = float(rng.uniform(-5, 0))
            params.append(ParamSpec.continuous(name, lo, lo + float(rng.uniform(0.5, 5))))
        elif kind == 1:
            lo = float(rng.uniform(0.01, 1.0))
            params.append(ParamSpec.continuous(name, lo, lo * float(rng.uniform(5, 100)), scale="log"))
        elif kind == 2:
            lo = int(rng.integers(-3, 3))
            params.append(ParamSpec.integer(name, lo, lo + int(rng.integers(2, 10))))
        else:
            k = int(rng.integers(2, 5))
            params.append(ParamSpec.categorical(name, [f"c{j}" for j in range(k)]))
    return SearchSpace(tuple(params))


def make_dataset(values, stage=0, start_id=0, provenance="sampled"):
    """Dataset of trials with the given objective-value rows and a dummy config."""
    ds = ObservationDataset()
    for i, z in enumerate(values):
        ds.append(
            Trial(
                id=start_id + i,
                stage=stage,
                config=HPConfig({"x": float(i)}),
                objective_values=tuple(z) if isinstance(z, (tuple, list, np.ndarray)) else (z,),
                provenance=provenance,
            )
        )
    return ds

import numpy as np
import pytest

from fbm_sde.model import SdeProblem

CORPUS = {
    "langevin": dict(hurst=0.75, x0=1.0, drift="l*x", diffusion="1", params={"l": 1.0}),
    "degenerate": dict(hurst=0.75, x0=0.1, drift="2+sin(x)", diffusion="2+sin(x)", params={}),
    "non_degenerate": dict(hurst=0.75, x0=0.1, drift="1", diffusion="2+sin(x)", params={}),
    "zero_drift": dict(hurst=0.75, x0=0.1, drift="0", diffusion="2+sin(x)", params={}),
}


def make_problem(name, **overrides):
    data = dict(CORPUS[name])
    data.update(overrides)
    return SdeProblem.from_dict(data)


@pytest.fixture
def langevin():
    return make_problem("langevin")


@pytest.fixture
def degenerate():
    return make_problem("degenerate")


@pytest.fixture
def non_degenerate():
    return make_problem("non_degenerate")


@pytest.fixture(params=sorted(CORPUS))
def corpus_problem(request):
    return make_problem(request.param)


class FixedStream:
    """Stand-in for a generator that hands out prescribed normals."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self.pos = 0

    def standard_normal(self, size):
        out = self.values[self.pos : self.pos + size]
        if out.size != size:
            raise RuntimeError("stream exhausted")
        self.pos += size
        return out.copy()

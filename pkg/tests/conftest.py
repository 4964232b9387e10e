import json
from pathlib import Path

import numpy as np
import pytest

from weakforge.checkpoint import load_snapshot
from weakforge.model import ArchConfig, PolicySnapshot, get_model
from weakforge.rng import rng
from weakforge.vocab import Vocab

FIXTURES = Path(__file__).parent / "fixtures"

TINY = ArchConfig(d_model=4, context_length=12, n_layer=1, n_head=2, ff_mult=2)


@pytest.fixture(scope="session")
def vocab():
    return Vocab()


@pytest.fixture(scope="session")
def v4():
    """Four content symbols, no specials."""
    return Vocab(symbols="abcd", specials=())


@pytest.fixture(scope="session")
def policy():
    return load_snapshot(FIXTURES / "policy.wkfg")


@pytest.fixture(scope="session")
def reference():
    return load_snapshot(FIXTURES / "reference.wkfg")


@pytest.fixture(scope="session")
def golden():
    return json.loads((FIXTURES / "golden.json").read_text())


def random_snapshot(arch, vocab, seed, scale=0.5, tag="t"):
    model = get_model(arch, vocab.size)
    theta = rng(seed, "test-snapshot").normals(model.n_params) * scale
    return PolicySnapshot.create(arch, vocab, theta, tag=tag)


def rand_ids(seed, n, V):
    g = rng(seed, "ids")
    return [g.below(V) for _ in range(n)]


def assert_close(a, b, tol):
    assert abs(float(a) - float(b)) <= tol, (a, b)


np.set_printoptions(precision=12)

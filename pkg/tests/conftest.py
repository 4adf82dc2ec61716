from __future__ import annotations

import random

import pytest

from poa_ca.topology import build_testbed


@pytest.fixture(scope="session")
def toy_testbed():
    """Shared read-only topology; tests that rotate or mutate build their own."""
    return build_testbed(profile="toy", seed=101)


@pytest.fixture()
def rng():
    return random.Random(0xC0FFEE)

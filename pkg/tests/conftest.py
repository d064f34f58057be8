from __future__ import annotations

import numpy as np
import pytest


def assert_contract(stream, result) -> None:
    """Oracle calls equal the ledger, no row is fetched twice, every fetched row was sampled."""
    oracle = stream.oracle
    assert oracle.invocations == result.queries
    assert len(set(oracle.queried)) == len(oracle.queried)
    assert set(oracle.queried) <= set(result.sampled_rows)
    assert set(oracle.queried) == result.ledger.rows


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

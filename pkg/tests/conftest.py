"""Shared model fixtures used across the test modules."""

import numpy as np
import pytest

from carbon_abatement.hjb import GridSpec
from carbon_abatement.model import (
    ConstantPrice,
    EconomicParams,
    Filter,
    FilterHalf,
    LinearResidual,
    ModelSpec,
    NoRebate,
    TwoTech,
    TwoTechAlpha,
)
from carbon_abatement.tax import TaxChain

FILTER = Filter(a=1.25, c_bar=1.0, e0=1.5, e1=0.5)
TWOTECH = TwoTech(c_b=1.0, e_b=1.0, a_b=1.0, p_g=0.2, x_bar=20.0)


def filter_model(kappa=0.5, sigma=0.05, fixed=4.0, rebate=None, T=15.0, q_max=4.0, p=5.0):
    econ = EconomicParams(r=0.02, delta=0.05, sigma=sigma, kappa=kappa, T=T, q_max=q_max, fixed_output=fixed)
    return ModelSpec(econ, FILTER, rebate or NoRebate(), ConstantPrice(p))


def twotech_model(alpha=0.0, T=15.0, q_min=0.0):
    econ = EconomicParams(r=0.04, delta=0.02, sigma=0.2, kappa=0.5, T=T, q_max=10.0, q_min=q_min)
    rebate = TwoTechAlpha(alpha) if alpha else NoRebate()
    return ModelSpec(econ, TWOTECH, rebate, ConstantPrice(2.1), LinearResidual(0.7))


def increase_chain(high=0.2):
    return TaxChain.two_state(0.0, high, 0.25, 0.0)


def reversal_chain(high=0.2):
    return TaxChain.two_state(0.0, high, 0.25, 0.25, start_high=True)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance PASS/FAIL lines collected during the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)


@pytest.fixture
def fmodel():
    return filter_model()


@pytest.fixture
def small_filter_grid():
    return GridSpec(-1.0, 12.0, n_x=101, n_t=300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["FILTER", "TWOTECH", "filter_model", "twotech_model", "increase_chain", "reversal_chain", "FilterHalf"]

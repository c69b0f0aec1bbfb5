import warnings

import numpy as np
import pytest

from blochfx.acceptance import dynamics_model, fredholm_model, magnetic_2d_model, residual_model
from blochfx.atlas import build_band_atlas, fix_smooth_gauge
from blochfx.config import mathieu_spec
from blochfx.errors import AliasWarning
from blochfx.symbols import SymbolTable

warnings.simplefilter("ignore", AliasWarning)


@pytest.fixture(scope="session")
def mathieu():
    return mathieu_spec()


@pytest.fixture(scope="session")
def mathieu_atlas(mathieu):
    return build_band_atlas(mathieu)


@pytest.fixture(scope="session")
def mathieu_gauge(mathieu_atlas):
    return fix_smooth_gauge(mathieu_atlas)


@pytest.fixture(scope="session")
def fredholm_table():
    return SymbolTable.from_spec(fredholm_model())


@pytest.fixture(scope="session")
def residual_table():
    return SymbolTable.from_spec(residual_model())


@pytest.fixture(scope="session")
def dynamics_table():
    return SymbolTable.from_spec(dynamics_model())


@pytest.fixture(scope="session")
def table_2d():
    return SymbolTable.from_spec(magnetic_2d_model())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

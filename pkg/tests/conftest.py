import numpy as np
import pytest

from fontpair import netmodel, raster
from fontpair.testing import make_corpus

SMALL = dict(input_size=8, conv_channels=(2, 2, 3, 3), fc_sizes=(8, 4, 2))


@pytest.fixture(scope="session")
def small_config():
    return netmodel.ModelConfig(**SMALL)


@pytest.fixture(scope="session")
def small_model(small_config):
    return netmodel.init_params(small_config, 0, dtype=np.float64)


@pytest.fixture(scope="session")
def synth_fonts(tmp_path_factory):
    """Twelve procedurally drawn TrueType fonts."""
    d = tmp_path_factory.mktemp("synth_fonts")
    make_corpus(d, 12, seed=1)
    return d


@pytest.fixture(scope="session")
def synth_dataset(synth_fonts, tmp_path_factory):
    """The synthetic fonts rasterized at 16 px."""
    out = tmp_path_factory.mktemp("synth_ds")
    return raster.build_dataset(synth_fonts, out, size=16)


CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])

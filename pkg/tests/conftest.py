import pytest

from src.logging_config import setup_logging

setup_logging("WARNING")

from src.domains import generate_demos, get_domain  # noqa: E402
from tests.helpers import make_oracle_fit  # noqa: E402


@pytest.fixture(scope="session")
def blocks_domain():
    return get_domain("blocks")


@pytest.fixture(scope="session")
def tableclean_domain():
    return get_domain("tableclean")


@pytest.fixture(scope="session")
def satellites_domain():
    return get_domain("satellites")


@pytest.fixture(scope="session")
def blocks_demos(blocks_domain):
    return generate_demos(blocks_domain, 8, seed=0)


@pytest.fixture(scope="session")
def tableclean_demos(tableclean_domain):
    return generate_demos(tableclean_domain, 6, seed=0)


@pytest.fixture(scope="session")
def satellites_demos(satellites_domain):
    return generate_demos(satellites_domain, 6, seed=0)


@pytest.fixture
def blocks_oracle_fit(blocks_domain, blocks_demos):
    return make_oracle_fit(blocks_domain, blocks_demos)


@pytest.fixture
def tableclean_oracle_fit(tableclean_domain, tableclean_demos):
    return make_oracle_fit(tableclean_domain, tableclean_demos)

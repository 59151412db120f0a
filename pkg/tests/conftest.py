import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def cell8():
    from perfhom.cellgeom import default_cell

    return default_cell(8)


@pytest.fixture(scope="session")
def cell16():
    from perfhom.cellgeom import default_cell

    return default_cell(16)


@pytest.fixture(scope="session")
def paper_field():
    from perfhom.monotone import make_paper_example

    return make_paper_example(0.9)

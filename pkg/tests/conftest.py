import pytest

from app.config import settings
from app.schemas.mixture import Component, InitialProfile, RateMixture
from app.schemas.solution import SolutionField


def mixture(*pairs) -> RateMixture:
    return RateMixture(components=tuple(Component(f=f, rho=rho) for f, rho in pairs))


@pytest.fixture
def make_mixture():
    return mixture


@pytest.fixture
def single_field():
    """One evaporating component with f = 1."""
    return SolutionField.uniform(mixture((1.0, 1.0)))


@pytest.fixture
def two_component():
    """f = (1, 0), rho = (0.5, 0.5): half the fluid never evaporates."""
    return mixture((1.0, 0.5), (0.0, 0.5))


@pytest.fixture
def two_component_field(two_component):
    return SolutionField.uniform(two_component)


@pytest.fixture
def smooth_profile():
    # u_1 = 0.2 + 0.1 y, u_2 = 0.3 - 0.1 y + 0.05 y^2, u_3 = 0.5 - 0.05 y^2
    return InitialProfile(
        breakpoints=(0.0, 1.0),
        cells=(((0.2, 0.1), (0.3, -0.1, 0.05), (0.5, 0.0, -0.05)),),
    )


@pytest.fixture
def smooth_field(smooth_profile):
    rho_1 = 0.25
    rho_2 = 0.3 - 0.05 + 0.05 / 3
    m = mixture((0.5, rho_1), (1.0, rho_2), (2.0, 1.0 - rho_1 - rho_2))
    return SolutionField(mixture=m, profile=smooth_profile)


@pytest.fixture
def two_cell_field():
    """Profile with a jump at y = 0.5."""
    profile = InitialProfile(
        breakpoints=(0.0, 0.5, 1.0),
        cells=(
            ((0.3, 0.2), (0.7, -0.2)),
            ((0.5, 0.1), (0.5, -0.1)),
        ),
    )
    m = mixture((1.0, 0.4375), (3.0, 0.5625))
    return SolutionField(mixture=m, profile=profile)


@pytest.fixture
def small_chunks(monkeypatch):
    """Forces the simulator through many event chunks."""
    monkeypatch.setattr(settings, "SIM_CHUNK_EVENTS", 257)


@pytest.fixture
def debug_mode(monkeypatch):
    monkeypatch.setattr(settings, "DEBUG", True)

import pytest

from popident import ModelInstance, SpatialGrid, constant_field, preset_field


@pytest.fixture(scope="session")
def grid_coarse():
    """201-node grid on [-1, 1]; the scale the derivative/adjoint checks use."""
    return SpatialGrid.from_spacing(-1.0, 1.0, 1e-2)


@pytest.fixture(scope="session")
def grid_fine():
    return SpatialGrid.from_spacing(-1.0, 1.0, 1e-3)


def bump_model(grid, p_name="one_plus_sin_sq", d_value=1.0, n0_scale=1.0):
    """Cosine-bump initial density with a named growth preset and constant d."""
    return ModelInstance(
        p=preset_field(grid, p_name),
        d=constant_field(grid, d_value),
        n0=preset_field(grid, "cos_half", scale=n0_scale),
    )

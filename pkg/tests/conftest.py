import numpy as np
import pytest

import kspod


@pytest.fixture(scope="session")
def desk_setup():
    """Shared small-scale synthetic setup: ranges, recipe, grid, times."""
    ranges = kspod.SWIRL_DESIGN_RANGES
    return {
        "ranges": ranges,
        "recipe": kspod.default_recipe(ranges),
        "grid": kspod.make_grid(16, 14),
        "times": kspod.make_times(32),
    }


@pytest.fixture(scope="session")
def small_cases(desk_setup):
    """Ten synthetic training cases on a 2x5 sliced design."""
    design = kspod.generate_slhd(2, 5, 3, seed=0)
    physical = kspod.scale_design(design, desk_setup["ranges"])
    return [
        kspod.synth_flowfield(
            row, desk_setup["grid"], desk_setup["times"],
            desk_setup["recipe"], case_id=f"case_{i:03d}",
        )
        for i, row in enumerate(physical)
    ]


@pytest.fixture(scope="session")
def small_model(desk_setup, small_cases):
    options = kspod.TrainOptions(ranges=desk_setup["ranges"])
    return kspod.train(small_cases, options)


def rng(seed=0):
    return np.random.default_rng(seed)

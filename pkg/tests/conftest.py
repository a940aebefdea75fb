import numpy as np
import pytest
import torch

# Single-threaded torch keeps reduction order fixed; several tests assert
# bit-level determinism.
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_scene():
    from skystreet.city import CityConfig, generate_city

    return generate_city(
        11,
        CityConfig(
            blocks_x=1, blocks_y=1, block_size=50.0, road_width=10.0,
            height_min=10.0, height_max=24.0,
        ),
    )


@pytest.fixture(scope="session")
def env():
    from skystreet.city import EnvironmentCondition

    return EnvironmentCondition(
        sun_direction=(-0.45, -0.25, -0.86), ambient=0.35, fog_density=0.0015
    )


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory, small_scene, env):
    """A tiny captured dataset shared by dataset/cloud/condition/cli tests."""
    from skystreet.cli import intrinsics_for
    from skystreet.dataset import capture_dataset
    from skystreet.trajectory import AerialPlanConfig, GroundPlanConfig, plan_aerial, plan_ground

    acfg = AerialPlanConfig(base_altitude=60.0, altitude_margin=25.0, spacing_base=50.0, overlap_factor=0.2)
    rigs = plan_aerial(small_scene, acfg)
    gcfg = GroundPlanConfig(spacing=10.0, camera_height=1.7, turn_radius=4.0, clearance=1.0)
    path = plan_ground(small_scene, (np.array([5.0, 8.0]), np.array([5.0, 52.0])), gcfg)
    root = tmp_path_factory.mktemp("mini_dataset")
    return capture_dataset(
        root, small_scene, env, rigs, acfg, intrinsics_for(64, 72.0),
        [path], gcfg, intrinsics_for(64, 68.0),
    )

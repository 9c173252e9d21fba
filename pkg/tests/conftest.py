import pytest

from tfm.synth import ObjectSpec, SceneSpec, generate


def constant_velocity(start, velocity):
    return {"kind": "constant_velocity", "start": list(start), "velocity": list(velocity)}


def single_object_spec(seed=7, duration=6, velocity=(0.3, 0.0, 0.0), noise=0.0,
                       sample_count=600, background=800, occlusions=()):
    obj = ObjectSpec(dims=(3.0, 2.0, 1.6), sample_count=sample_count,
                     motion=constant_velocity((12.0, 6.0, 1.0), velocity),
                     class_label="CAR", occlusions=occlusions)
    return SceneSpec(seed=seed, duration=duration, ego=constant_velocity((0, 0, 0), (0, 0, 0)),
                     objects=(obj,), background_count=background,
                     background_extent=25.0, noise_sigma=noise)


@pytest.fixture(scope="session")
def simple_scene():
    """One rigid object at 0.3 m/frame, identity ego, zero noise."""
    return generate(single_object_spec())


@pytest.fixture(scope="session")
def simple_window(simple_scene):
    return simple_scene.window_at(3, 3)

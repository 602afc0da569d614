import numpy as np
import pytest

from dixonkit.phantom import PhantomConfig, generate_phantom
from dixonkit.pipeline import PipelineConfig
from dixonkit.signal_model import EchoSchedule, FatSpectrum


@pytest.fixture(scope="session")
def spectrum():
    return FatSpectrum.liver_6peak()


@pytest.fixture(scope="session")
def dixon_schedule():
    return EchoSchedule.dixon()


@pytest.fixture(scope="session")
def ideal_schedule():
    return EchoSchedule.ideal()


# small grid keeps unit tests fast; acceptance tests use the full geometry
@pytest.fixture(scope="session")
def small_phantom_cfg():
    return PhantomConfig(rng_seed=7, rows=96, cols=96, noise_sigma=0.02)


@pytest.fixture(scope="session")
def small_pipeline_cfg():
    return PipelineConfig(seed=7, dixon_rows=92, dixon_cols=72, search_radius=6)


@pytest.fixture(scope="session")
def small_phantom(small_phantom_cfg):
    return generate_phantom(small_phantom_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory, small_phantom_cfg, small_pipeline_cfg):
    """A 6-subject cohort on the small grid, shared across pipeline tests."""
    from dixonkit.pipeline import build_cohort, write_manifest

    out = tmp_path_factory.mktemp("cohort")
    manifest = build_cohort(6, small_phantom_cfg, small_pipeline_cfg, out)
    write_manifest(manifest, out / "manifest.json")
    return out, manifest

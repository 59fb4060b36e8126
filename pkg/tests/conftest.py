import numpy as np
import pytest
import torch

from eyedentify.oculosim.identity import IdentityParams
from eyedentify.preprocessing.transforms import InputWindow


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture
def identity():
    return IdentityParams(
        fixation_duration_mean_ms=250.0,
        fixation_duration_sd_ms=60.0,
        saccade_duration_intercept_ms=25.0,
        saccade_duration_slope_ms_per_deg=2.5,
        saccade_peak_velocity=400.0,
        microsaccade_rate=1.5,
        microsaccade_peak_velocity=60.0,
        microsaccade_duration_ms=15.0,
        drift_speed=0.25,
        tremor_frequency=70.0,
        tremor_velocity_amplitude=0.15,
        noise_sd=0.001,
    )


@pytest.fixture
def make_windows():
    """Windows whose views are separable by label: class i is shifted by i."""

    def make(n, length=1000, labels=("a", "b"), seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for k in range(n):
            label = labels[k % len(labels)]
            shift = labels.index(label)
            slow = np.tanh(0.3 * rng.standard_normal((length, 2)) + 0.5 * shift)
            fast = rng.standard_normal((length, 2)) + shift
            out.append(InputWindow(slow=slow, fast=fast, label=label, origin=(f"{label}/0", k * length)))
        return out

    return make


TINY_WINDOW = 64


@pytest.fixture
def make_bundle():
    """Small two-block bundle over 64-sample windows."""
    from eyedentify.models.model_manager import STAGES, ModelBundle
    from eyedentify.pydantic_models.models import ConvBlock, JointConfig, SubnetConfig, TransformConfig

    subnet = SubnetConfig(
        conv_blocks=[ConvBlock(kernel=5, filters=32), ConvBlock(kernel=3, filters=32)],
        fc_sizes=[32, 16],
        embedding_size=8,
        pool_stride=2,
    )

    def make(seed=0, labels=("a", "b"), trained=False, zscore=None):
        bundle = ModelBundle(
            subnet, subnet, JointConfig(fc_size=16, embedding_size=8), TransformConfig(), list(labels),
            zscore=zscore, window_length=TINY_WINDOW, seed=seed,
        )
        if trained:
            for stage in STAGES:
                bundle.mark_trained(stage)
        return bundle

    return make

import numpy as np
import pytest

from bidcontrol import (BidLog, CampaignSpec, DriftConfig, Opportunity,
                        SyntheticConfig)

T = 24
_diurnal = 1.0 + 0.6 * np.sin(np.linspace(0, 2 * np.pi, T, endpoint=False))
DIURNAL_PROFILE = tuple(_diurnal / _diurnal.sum())
RESHAPE_FACTORS = tuple(1.0 + 0.3 * np.sin(np.linspace(0, 4 * np.pi, T, endpoint=False) + 1.0))


@pytest.fixture
def two_opp_log():
    """Canonical two-opportunity instance: v = (0.1, 0.01), wp = (1, 2)."""
    return BidLog.from_opportunities([
        Opportunity(id=0, timestamp=0, wp=1.0, ctr=0.5, cvr=0.2),
        Opportunity(id=1, timestamp=0, wp=2.0, ctr=0.1, cvr=0.1),
    ])


@pytest.fixture
def two_opp_spec():
    return CampaignSpec("two-opp", budget=1.0, cpc_cap=4.0)


def small_synth(seed=7, n=4000, wp_factor=1.2, volume_factors=RESHAPE_FACTORS):
    return SyntheticConfig(
        n_opportunities=n, volume_profile=DIURNAL_PROFILE,
        ctr_shape=(2.2, 550.0), cvr_shape=(0.8, 39.0),
        wp_base=0.8, wp_ctr_exponent=0.9, wp_noise_sigma=0.7,
        rng_seed=seed,
        drift=DriftConfig(wp_factor=wp_factor, volume_factors=volume_factors))


@pytest.fixture
def synth_config():
    return small_synth()


def random_log(rng, n, spread=1.0, day_label="train"):
    """Small random instance for oracle-based checks."""
    wp = np.exp(rng.normal(0.0, spread, n)) * rng.uniform(0.5, 2.0)
    ctr = rng.uniform(0.01, 0.9, n)
    cvr = rng.uniform(0.001, 0.5, n)
    ts = np.sort(rng.integers(0, 86400, n))
    return BidLog.from_arrays(np.arange(n), ts, wp, ctr, cvr, day_label=day_label)

import json
from unittest.mock import mock_open, patch

import pytest

from delegsim import exc
from delegsim.config import CONFIG_ENV, ContractConfig, SimConfig, load_config


def test_defaults():
    config = SimConfig()
    assert config.floor.theta_crit == 0.2
    assert config.market.bid_window == 5
    assert config.market.min_stake == 500_000
    assert config.contract.dispute_window == 10
    assert config.coordination.redelegation_fees == (10_000, 20_000, 40_000, 80_000)
    assert config.reputation.weights == (0.6, 0.2, 0.2)


def test_nested_overrides():
    config = SimConfig.from_dict(
        {"market": {"bid_window": 7}, "coordination": {"redelegation_fees": [1, 2]}}
    )
    assert config.market.bid_window == 7
    assert config.coordination.redelegation_fees == (1, 2)
    assert config.contract == ContractConfig()


def test_int_accepted_for_float():
    config = SimConfig.from_dict({"verification": {"spot_rate": 1}})
    assert config.verification.spot_rate == 1.0


@pytest.mark.parametrize(
    "overrides",
    [
        {"nope": 1},
        {"market": {"nope": 1}},
        {"market": 3},
        {"market": {"weights": {"cost": 0.5}}},
        {"contract": {"arbitration_panel": 4}},
        {"reputation": {"damping": 1.0}},
        {"monoculture_failure_rate": 2.0},
    ],
)
def test_invalid_overrides(overrides):
    with pytest.raises(exc.ConfigError):
        SimConfig.from_dict(overrides)


def test_env_file_is_overridden_by_explicit_values():
    base = json.dumps({"market": {"bid_window": 9, "rfq_fee": 1}})
    with patch("builtins.open", mock_open(read_data=base)):
        config = load_config({"market": {"bid_window": 3}}, {CONFIG_ENV: "base.json"})
    assert config.market.bid_window == 3
    assert config.market.rfq_fee == 1


def test_unreadable_env_file():
    with pytest.raises(exc.ConfigError):
        load_config(None, {CONFIG_ENV: "/nonexistent/delegsim.json"})


def test_no_env_no_overrides():
    assert load_config(None, {}) == SimConfig()

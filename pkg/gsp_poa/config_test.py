import json

import pytest
from pydantic import ValidationError

from .config import ExperimentConfig, load_config


def test_hash_ignores_runtime_fields():
    base = ExperimentConfig(kind="poa3", seed=4)
    assert base.config_hash == base.model_copy(update={"threads": 8, "out_dir": "elsewhere"}).config_hash
    assert base.config_hash != ExperimentConfig(kind="poa3", seed=5).config_hash
    assert len(base.config_hash) == 64


@pytest.mark.parametrize(
    "fields",
    [
        {"kind": "simulate", "values": [], "ctrs": [1.0], "bids": [0.5]},
        {"kind": "simulate", "values": [1.0, 0.5], "ctrs": [0.5, 1.0], "bids": [0.5, 0.1]},
        {"kind": "check-ne", "values": [1.0], "ctrs": [1.0]},
        {"kind": "bpoa", "ctrs": [1.0]},
        {"kind": "learn"},
        {"kind": "learn", "n_slots": 2, "rounds": 10, "burn_in": 10},
        {"kind": "poa3", "grid_points": 5000},
        {"kind": "poa3", "resolution": 20_000},
        {"kind": "poa3", "seed": -1},
        {"kind": "poa3", "seed": 2**64},
        {"kind": "poa3", "colour": "blue"},
        {"kind": "auction"},
    ],
)
def test_schema_violations(fields):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(fields)


def test_instance_or_slot_count_is_enough_for_sampling_experiments():
    assert ExperimentConfig(kind="learn", n_slots=3).values is None
    assert ExperimentConfig(kind="enumerate", values=(1.0, 0.5), ctrs=(1.0, 0.2)).n_slots is None


def test_load_config_applies_overrides(tmp_path):
    path = tmp_path / "byzantine.json"
    path.write_text(
        json.dumps(
            {
                "kind": "byzantine",
                "values": [1.0, 0.5],
                "ctrs": [1.0, 0.5],
                "population": {"rational": [1], "scripts": {"0": {"kind": "constant", "bid": 0.0}}},
                "seed": 3,
            }
        )
    )
    config = load_config(path, {"seed": 9, "rounds": None, "kind": "byzantine"})
    assert config.seed == 9
    assert config.rounds == 200_000
    assert config.population.byzantine == (0,)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.json", {"kind": "poa3"})

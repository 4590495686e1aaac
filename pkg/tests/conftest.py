import json
import time
from pathlib import Path

import pytest

from mergeplan.simulator import ScenarioConfig, run

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def load_config(name: str) -> ScenarioConfig:
    raw = json.loads((SCENARIO_DIR / name).read_text())
    return ScenarioConfig.from_dict(raw)


@pytest.fixture(scope="session")
def yield_run():
    """Golden yield-intention run shared across test modules."""
    config = load_config("intersection_yield.json")
    t0 = time.time()
    output = run(config)
    return config, output, time.time() - t0


@pytest.fixture(scope="session")
def drive_run():
    """Golden drive-intention run shared across test modules."""
    config = load_config("intersection_drive.json")
    t0 = time.time()
    output = run(config)
    return config, output, time.time() - t0

import json
import sys
from pathlib import Path

import pytest

from rulerepair.engine import EngineConfig, repair
from rulerepair.world_model import bundled_scenario_dir, scenario_from_dict

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tools"))
sys.path.insert(0, str(Path(__file__).resolve().parent))


def _docs():
    return {p.stem: json.loads(p.read_text()) for p in sorted(bundled_scenario_dir().glob("*.json"))}


@pytest.fixture(scope="session")
def docs():
    return _docs()


@pytest.fixture(scope="session")
def scenarios(docs):
    return {n: scenario_from_dict(d) for n, d in docs.items()}


@pytest.fixture(scope="session")
def outcomes(scenarios):
    """One engine run per bundled scenario, shared by the suite."""
    cfg = EngineConfig()
    return {n: repair(sc, None, cfg) for n, sc in scenarios.items()}

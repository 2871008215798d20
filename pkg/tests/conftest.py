from datetime import datetime, timedelta

import numpy as np
import pytest

from flexsac.core import BuildingParams, RunConfig
from flexsac.traces import TraceSet, generate_traces


def constant_traces(start="2017-07-01T00:00", days=3, tdb=20.0, solar=0.0, occupancy=0.0,
                    price=0.05, step_minutes=15) -> TraceSet:
    n = days * 24 * 60 // step_minutes
    full = lambda v: np.full(n, float(v))
    return TraceSet(datetime.fromisoformat(start), timedelta(minutes=step_minutes), full(tdb),
                    full(tdb - 3), full(50), full(3), full(180), full(solar), full(price),
                    full(occupancy), label="constant")


def quiet_building(**kw) -> BuildingParams:
    """No internal gains, no TES: the RC network is driven by outdoor air only."""
    base = dict(plug_light_w_m2=0.0, people_w_m2=0.0, tes_volume_m3=0.0, capacity_kw=3000.0)
    base.update(kw)
    return BuildingParams(**base)


@pytest.fixture(scope="session")
def default_traces():
    cfg = RunConfig()
    return generate_traces(cfg.synthetic, cfg.schedule, cfg.sim_step_minutes)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

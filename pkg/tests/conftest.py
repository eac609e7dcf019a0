import time

import pytest

import microdse as m


@pytest.fixture(scope="session")
def reference_scenario():
    return m.bundled_scenario()


@pytest.fixture(scope="session")
def reference_topology(reference_scenario):
    return reference_scenario.sim.topology


@pytest.fixture(scope="session")
def scenario_run(reference_scenario):
    """One full run of the bundled reference scenario, shared by the tests
    that score it.  Timed for the runtime acceptance bound."""
    t0 = time.perf_counter()
    trace = m.simulate_scenario(reference_scenario)
    result = m.estimate_scenario(reference_scenario, trace)
    elapsed = time.perf_counter() - t0
    metrics = m.compute_metrics(reference_scenario, result)
    return {
        "scenario": reference_scenario,
        "trace": trace,
        "result": result,
        "metrics": metrics,
        "elapsed_s": elapsed,
    }

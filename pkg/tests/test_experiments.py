import math

import pytest

from conftest import one_class_scenario
from noahsim import experiments
from noahsim.cluster import Request
from noahsim.experiments import SweepSpec, aggregate, read_rows, run_one, run_sweep, write_rows
from noahsim.metrics import ContainerRecord, RunMetrics, container_utilization, percentile, summarize
from noahsim.scenario import EVALUATION_SCHEDULERS, Scenario
from noahsim.simulation import Simulation, run_scenario


def rec(created, last, busy, setup=0.5, served=1):
    return ContainerRecord(0, 0, created, last, busy, setup, served)


def test_container_utilization_examples():
    assert container_utilization([rec(0.0, 0.7, 0.2)]) == pytest.approx(0.2 / 0.7)
    assert container_utilization([rec(0.0, 0.7, 0.2)]) == pytest.approx(0.286, abs=5e-4)
    assert container_utilization([rec(1.0, 3.0, 2.0, setup=0.0)]) == 1.0
    assert container_utilization([]) is None


def test_unused_container_counts_its_setup():
    u = container_utilization([rec(0.0, 0.7, 0.2), rec(0.0, 0.0, 0.0, setup=0.5, served=0)])
    assert u == pytest.approx(0.2 / 1.2)
    with pytest.raises(ValueError):
        container_utilization([rec(2.0, 1.0, 0.1)])


def test_percentile():
    assert percentile([1.0, 2.0, 3.0, 4.0], 50) == 2.5
    assert percentile([5.0], 99) == 5.0
    assert math.isnan(percentile([], 50))


def _metrics_with(responses):
    m = RunMetrics(lam=1.0, scheduler="ow", seed=1)
    for i, resp in enumerate(responses):
        r = Request(i, 0, 0.0, 0.2)
        r.dispatch = 0.0
        r.exec_start = resp - 0.2
        r.completion = resp
        m.requests.append(r)
    return m


def test_summary_mean_response():
    row = summarize(_metrics_with([0.7, 0.9]))
    assert float(row["mean_response_s"]) == pytest.approx(0.8)
    assert row["total_events"] == row["completions"] == "2"
    assert row["error"] == ""


def test_single_event_is_one_cold_start(tmp_path):
    trace = tmp_path / "one.csv"
    trace.write_text("0.0,f0\n")
    row = summarize(Simulation(one_class_scenario(trace), 1).run())
    assert row["cold_starts"] == "1" and row["hosts_employed"] == "1"


def test_total_events_near_expectation():
    row = summarize(run_scenario(Scenario().with_overrides(scheduler="ow", peak_rate=20), 1))
    n = int(row["total_events"])
    # 2100 expected, Poisson sd about 46
    assert abs(n - 2100) < 4 * math.sqrt(2100)


def test_sweep_single_point(tmp_path):
    spec = SweepSpec(lambda_grid=[1], schedulers=["ow"], seeds=[1])
    out = tmp_path / "r.csv"
    rows = run_sweep(spec, str(out))
    assert len(rows) == 1 and rows[0]["error"] == ""
    assert read_rows(str(out)) == rows


def test_default_grid_size():
    spec = SweepSpec()
    assert len(spec.points()) == 80 * 6 * 5 == 2400
    assert spec.schedulers == list(EVALUATION_SCHEDULERS)
    with pytest.raises(ValueError):
        SweepSpec(lambda_grid=[])


def test_sweep_is_deterministic_and_parallel_matches_serial(tmp_path):
    spec = SweepSpec(lambda_grid=[3, 6], schedulers=["ow", "noah:1ms"], seeds=[1, 2])
    a = run_sweep(spec, str(tmp_path / "a.csv"))
    b = run_sweep(spec, str(tmp_path / "b.csv"))
    c = run_sweep(spec, str(tmp_path / "c.csv"), parallel=2)
    assert a == b == c
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()
    assert [(r["lambda"], r["scheduler"], r["seed"]) for r in a] == [
        (repr(float(lam)), s, str(seed)) for lam in (3, 6) for s in ("ow", "noah:1ms") for seed in (1, 2)]


def test_failed_point_becomes_error_row(tmp_path, monkeypatch):
    real = experiments.run_scenario

    def flaky(sc, seed, trace=None):
        if seed == 2:
            raise RuntimeError("boom")
        return real(sc, seed, trace)

    monkeypatch.setattr(experiments, "run_scenario", flaky)
    seen = []
    rows = run_sweep(SweepSpec(lambda_grid=[2], schedulers=["ow"], seeds=[1, 2, 3]), str(tmp_path / "r.csv"),
                     progress=seen.append)
    assert len(rows) == 3 and len(seen) == 3
    assert rows[1]["error"] == "RuntimeError: boom" and rows[1]["cold_starts"] == ""
    assert rows[0]["error"] == rows[2]["error"] == ""
    agg = aggregate(rows)
    assert agg[0]["n"] == 2


def test_trace_files_written(tmp_path):
    row = run_one(Scenario(), 2, "noah:10ms", 1, trace_dir=str(tmp_path))
    assert row["error"] == ""
    (path,) = tmp_path.iterdir()
    assert path.name == "noah_10ms_L2_s1.jsonl"
    assert path.read_text().count("\n") > 0


def test_csv_round_trip(tmp_path):
    rows = [summarize(_metrics_with([0.7, 0.9]))]
    p = str(tmp_path / "x.csv")
    write_rows(p, rows)
    assert read_rows(p) == rows


def test_aggregate_mean_and_std():
    rows = []
    for seed, cold in ((1, 10), (2, 20), (3, 30)):
        rows.append({"lambda": "5.0", "scheduler": "ow", "seed": str(seed), "cold_starts": str(cold),
                     "error": ""})
    (agg,) = aggregate(rows, metrics=("cold_starts",))
    assert agg["n"] == 3
    assert agg["cold_starts_mean"] == 20.0 and agg["cold_starts_std"] == 10.0


@pytest.mark.parametrize("sched", ["ow", "noncoop", "noah:10ms", "noah:10us"])
def test_row_invariants(sched):
    sc = Scenario().with_overrides(scheduler=sched, peak_rate=15)
    m = run_scenario(sc, 2)
    row = summarize(m)
    assert row["total_events"] == row["completions"]
    pairs = {(r.cls, r.site) for r in m.requests}
    assert m.cold_starts >= len(pairs)
    assert int(row["hosts_employed"]) <= 10
    for r in m.requests:
        assert r.completion - r.arrival >= 0.2 - 1e-9


def test_low_load_ow_response_bound():
    rows = [summarize(run_scenario(Scenario().with_overrides(scheduler="ow", peak_rate=5), s)) for s in (1, 2, 3)]
    for row in rows:
        assert float(row["mean_response_s"]) <= 0.2 + 0.5

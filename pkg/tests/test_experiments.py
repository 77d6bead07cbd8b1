import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipbayes import experiments as exp
from gossipbayes import graph
from gossipbayes.exceptions import ConfigError

SMALL = exp.ExperimentConfig(runs=4, K=5, n_per_agent=20)


class TestConfig:
    def test_defaults_resolve_model(self):
        assert exp.ExperimentConfig().path == "conjugate"
        cfg = exp.ExperimentConfig(model="beta-exponential")
        assert cfg.path == "nonconjugate" and cfg.theta_star == 0.5
        assert cfg.protocol(L=10).max_slots == 200

    def test_parse(self):
        cfg = exp.parse_config("# comment\nmodel = beta-exponential  # trailing\nK=4\nsweep_L = 1, 3\n"
                               "normalize_local_loss = yes\ntheta_star = none\n", runs=7, out=None)
        assert (cfg.K, cfg.runs, cfg.sweep_L, cfg.normalize_local_loss) == (4, 7, (1, 3), True)
        assert cfg.theta_star == 0.5 and cfg.out == "gfvl.csv"

    @pytest.mark.parametrize(
        "text",
        ["K", "colour = red", "K = ten", "model = gaussian", "K = 0", "theta_star = 1.5",
         "model = beta-exponential\npath = conjugate", "grid_points = 100", "normalize_local_loss = maybe"],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            exp.parse_config(text)

    def test_topology_spec(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("0 1\n1 2\n")
        assert exp.make_topology(exp.ExperimentConfig(topology=f"file:{path}")).K == 3
        with pytest.raises(ConfigError):
            exp.make_topology(exp.ExperimentConfig(topology="file:/nonexistent/edges"))
        with pytest.raises(ConfigError):
            exp.make_topology(exp.ExperimentConfig(K=3, unlearn_target=3))


class TestData:
    def test_bernoulli_mean(self):
        data = np.concatenate(exp.generate_data(exp.ExperimentConfig(), np.random.default_rng(0)))
        assert set(np.unique(data)) <= {0.0, 1.0}
        assert abs(data.mean() - 0.7) < 3 * math.sqrt(0.21 / data.size)

    def test_exponential_mean(self):
        cfg = exp.ExperimentConfig(model="beta-exponential", theta_star=0.4)
        data = np.concatenate(exp.generate_data(cfg, np.random.default_rng(1)))
        assert data.min() >= 0
        assert abs(data.mean() - 0.4) < 3 * 0.4 / math.sqrt(data.size)

    def test_deterministic(self):
        a = exp.generate_data(SMALL, np.random.default_rng(3))
        b = exp.generate_data(SMALL, np.random.default_rng(3))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestNearestRank:
    def test_examples(self):
        values = [5, 1, 4, 2, 3, 8, 7, 6]
        assert exp.nearest_rank(values, 0.5) == 4
        assert exp.nearest_rank(values, 0.125) == 1
        assert exp.nearest_rank(values, 0.875) == 7
        assert exp.nearest_rank([9.0], 0.125) == 9.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0.0, 1.0))
    def test_returns_member_with_rank_bounds(self, values, q):
        v = exp.nearest_rank(values, q)
        assert v in values
        assert sum(x <= v for x in values) >= q * len(values)


class TestRuns:
    def test_learning_trace_shape(self):
        rows = exp.run_experiment(SMALL)
        assert {r.run_id for r in rows} == set(range(4))
        assert all(r.kl >= 0 and math.isfinite(r.kl) for r in rows)
        for run in range(4):
            slots = [r.slot for r in rows if r.run_id == run]
            assert slots == list(range(1, len(slots) + 1))
        # conjugate runs stop exactly when covered, at zero divergence
        finals = [[r for r in rows if r.run_id == run][-1] for run in range(4)]
        assert all(r.kl < 1e-10 for r in finals)

    def test_run_ids_are_independent_of_run_count(self):
        few = exp.run_experiment(dataclasses.replace(SMALL, runs=2))
        many = exp.run_experiment(SMALL)
        assert few == [r for r in many if r.run_id < 2]

    def test_workers_do_not_change_output(self):
        cfg = exp.ExperimentConfig(model="beta-exponential", runs=4, K=5, n_per_agent=20, budget=30)
        assert exp.run_experiment(cfg) == exp.run_experiment(dataclasses.replace(cfg, workers=2))

    def test_summary_single_run_collapses_band(self):
        table = exp.summarize(exp.run_experiment(dataclasses.replace(SMALL, runs=1)))
        assert all(row[3] == row[4] == row[5] and row[6] == 1 for row in table)

    def test_summary_holds_last_value(self):
        rows = [exp.TraceRow(0, 1, 0, "learn", 3.0), exp.TraceRow(1, 1, 0, "learn", 5.0),
                exp.TraceRow(1, 2, 1, "learn", 1.0)]
        table = exp.summarize(rows)
        assert table[-1] == ("", 2, 2, 1.0, 1.0, 3.0, 2)

    def test_sweep_budget(self):
        cfg = exp.ExperimentConfig(model="beta-exponential", runs=2, K=5, n_per_agent=20, budget=40, sweep_L=(1, 4))
        rows = exp.run_sweep(cfg)
        lengths = {arm: max(r.slot for r in rows if r.arm == arm) for arm in ("L=1", "L=4")}
        assert lengths == {"L=1": 40, "L=4": 10}
        table = exp.summarize(rows, {"L=1": 1, "L=4": 4})
        assert max(row[2] for row in table if row[0] == "L=4") == 40

    def test_unlearn_arms_reach_same_posterior(self):
        cfg = dataclasses.replace(SMALL, unlearn_target=2, topology="star")
        rows = exp.run_unlearn_experiment(cfg)
        for arm in ("unlearn", "retrain"):
            finals = [[r for r in rows if r.arm == arm and r.run_id == run][-1] for run in range(4)]
            assert all(r.kl < 1e-10 for r in finals)
        assert {r.event for r in rows if r.arm == "unlearn"} >= {"unlearn-delete"}

    def test_unlearn_requires_target(self):
        with pytest.raises(ConfigError):
            exp.run_unlearn_experiment(SMALL)

    def test_mean_deletion_slot(self):
        cfg = exp.ExperimentConfig(runs=2000, n_per_agent=5, unlearn_target=9, train_slots=30, unlearn_slots=250)
        rows = exp.run_unlearn_experiment(cfg)
        slots = np.array([r.slot for r in rows if r.event == "unlearn-delete"])
        assert slots.size == 2000
        assert abs(slots.mean() - graph.complete_hitting_time(10)) < 3 * slots.std() / math.sqrt(slots.size)


def test_covertime_rows():
    rows = exp.run_covertime(dataclasses.replace(SMALL, K=10, trials=20_000))
    by_name = {r[0]: r for r in rows}
    assert set(by_name) == {"cover_steps", "hitting_slots", "retrain_cover_steps"}
    for name, row in by_name.items():
        _, _, K, trials, mean, low, high, closed = row
        assert low <= mean <= high and abs(mean - closed) < 0.05 * closed


def test_covertime_star_hub_falls_back_to_relay():
    rows = exp.run_covertime(exp.ExperimentConfig(topology="star", K=6, trials=2000, unlearn_target=0))
    retrain = rows[-1]
    assert retrain[0] == "retrain_cover_steps" and retrain[-1] is None and retrain[4] > 0


def test_csv_format(tmp_path):
    path = tmp_path / "t.csv"
    exp.write_trace_csv(path, [exp.TraceRow(0, 1, 3, "learn", 0.1)])
    assert path.read_bytes() == b"run_id,slot,scheduled_agent,event,kl,arm\n0,1,3,learn,0.10000000000000001,\n"
    assert exp.summary_path(path).name == "t.summary.csv"

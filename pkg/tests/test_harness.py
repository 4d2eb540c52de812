import numpy as np
import pytest
from scipy import stats

from conftest import curve, nonincreasing_within_bands
from icpmac.core import SupportSet
from icpmac.harness import (
    CSV_HEADER,
    AggregateRow,
    ConfigError,
    TrialRecord,
    aggregate,
    builtin_names,
    builtin_scenario,
    emit_csv,
    emit_trials_csv,
    make_dataset,
    parse_scenario,
    run_scenario,
    run_trials,
    soundness_violations,
)

BASE = {
    "name": "t",
    "generator": "sem-known",
    "grid": {"kind": "sample_size", "values": [5, 20]},
    "trials": 20,
    "seed": 3,
    "decoders": ["icp_mdd_known", "mii_known", "icp_mdd(0.05)"],
}


def rec(error, scenario="s", grid=1.0, method="m", trial=0):
    return TrialRecord(scenario, grid, method, trial, error, False, False, {"prop1": 0.1})


class TestScenarioConfig:
    def test_valid(self):
        sc = parse_scenario(BASE)
        assert sc.env_count == 2 and sc.effective_sigma_min == 1.0

    def test_zero_trials(self):
        with pytest.raises(ConfigError, match="trials"):
            parse_scenario({**BASE, "trials": 0})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_scenario({**BASE, "colour": "blue"})

    def test_missing_key(self):
        data = dict(BASE)
        del data["seed"]
        with pytest.raises(ConfigError, match="seed"):
            parse_scenario(data)

    def test_bad_decoder(self):
        with pytest.raises(ConfigError, match="decoders"):
            parse_scenario({**BASE, "decoders": ["lingam"]})

    def test_nested_path(self):
        with pytest.raises(ConfigError, match=r"grid\.values"):
            parse_scenario({**BASE, "grid": {"kind": "sample_size", "values": []}})

    def test_model_level_field_named(self):
        with pytest.raises(ConfigError, match="^n_e"):
            parse_scenario({**BASE, "grid": {"kind": "intervention_mean", "values": [0, 1]}})

    def test_sigma_min_above_sigma(self):
        with pytest.raises(ConfigError, match="sigma_min"):
            parse_scenario({**BASE, "sigma_min": 2.0})

    def test_builtins_load(self):
        assert builtin_names() == ["fig1a", "fig1b", "fig1c", "fig2a", "fig2b"]
        for name in builtin_names():
            assert builtin_scenario(name).trials == 1000


class TestDatasets:
    def test_deterministic(self):
        sc = parse_scenario(BASE)
        a, b = make_dataset(sc, 20, 4), make_dataset(sc, 20, 4)
        assert a.model.s_star == b.model.s_star
        for ea, eb in zip(a.envs, b.envs):
            assert ea.X.tobytes() == eb.X.tobytes() and ea.Y.tobytes() == eb.Y.tobytes()

    def test_common_random_numbers_across_grid(self):
        sc = parse_scenario({**BASE, "grid": {"kind": "intervention_mean", "values": [0, 3]}, "n_e": 10,
                             "intervention_means": [0.0, 0.0]})
        a, b = make_dataset(sc, 0.0, 1), make_dataset(sc, 3.0, 1)
        assert a.model.s_star == b.model.s_star
        np.testing.assert_array_equal(a.envs[0].X, b.envs[0].X)
        assert not np.array_equal(a.envs[1].X, b.envs[1].X)

    def test_simplex_all_ones_collides(self):
        sc = builtin_scenario("fig1a", trials=3)
        rows = run_scenario(sc)
        assert all(r.collisions == r.trials for r in rows)

    def test_fixed_w_wrong_length(self):
        sc = parse_scenario({**BASE, "w_policy": [1.0, 2.0], "m_range": [3, 3]})
        with pytest.raises(ConfigError, match="w_policy"):
            make_dataset(sc, 5, 0)


class TestRunScenario:
    def test_oracle_stub(self):
        sc = parse_scenario(BASE)
        rows = run_scenario(sc, decoders={"oracle": lambda ds: ds.model.s_star})
        assert [r.p_err for r in rows] == [0.0, 0.0]

    def test_adversarial_stub(self):
        sc = parse_scenario(BASE)
        flip = lambda ds: SupportSet(((1 << ds.model.m) - 1) & ~ds.model.s_star.bits)
        rows = run_scenario(sc, decoders={"complement": flip})
        assert [r.p_err for r in rows] == [1.0, 1.0]

    def test_absent_counts_as_error(self):
        rows = run_scenario(parse_scenario(BASE), decoders={"abstain": lambda ds: None})
        assert all(r.p_err == 1.0 and r.abstentions == r.trials for r in rows)

    def test_rows_and_bounds(self):
        rows = run_scenario(parse_scenario(BASE))
        assert [(r.grid_value, r.method) for r in rows] == [
            (5.0, "icp_mdd(0.05)"), (5.0, "icp_mdd_known"), (5.0, "mii_known"),
            (20.0, "icp_mdd(0.05)"), (20.0, "icp_mdd_known"), (20.0, "mii_known"),
        ]
        for r in rows:
            assert r.bound_min["prop1"] <= r.bounds["prop1"] <= r.bound_max["prop1"]
            assert r.stderr == pytest.approx(np.sqrt(r.p_err * (1 - r.p_err) / r.trials))

    def test_thread_count_irrelevant(self):
        sc = parse_scenario(BASE)
        assert run_trials(sc, threads=1) == run_trials(sc, threads=4)

    def test_env_var_threads(self, monkeypatch):
        monkeypatch.setenv("ICPMAC_THREADS", "3")
        sc = parse_scenario(BASE)
        assert run_scenario(sc) == run_scenario(sc, threads=1)

    def test_declared_constraints(self):
        sc = parse_scenario({**BASE, "constraints": {"p_e": 1.0}})
        rows = run_scenario(sc, decoders={"oracle": lambda ds: ds.model.s_star})
        assert rows[0].bounds["prop3"] is None and rows[0].bounds["prop2"] is not None


class TestAggregate:
    def test_single(self):
        (row,) = aggregate([rec(1)])
        assert row.p_err == 1.0 and row.stderr == 0.0

    def test_two(self):
        (row,) = aggregate([rec(0), rec(1, trial=1)])
        assert row.p_err == 0.5

    def test_bernoulli(self):
        draws = np.random.default_rng(2024).random(1000) < 0.2
        (row,) = aggregate([rec(int(e), trial=i) for i, e in enumerate(draws)])
        assert abs(row.p_err - 0.2) <= 0.04

    def test_mixed_scenarios(self):
        with pytest.raises(ValueError):
            aggregate([rec(0, scenario="a"), rec(0, scenario="b")])

    def test_ordering(self):
        rows = aggregate([rec(0, grid=10.0, method="b"), rec(0, grid=2.0, method="b"), rec(0, grid=10.0, method="a")])
        assert [(r.grid_value, r.method) for r in rows] == [(2.0, "b"), (10.0, "a"), (10.0, "b")]


class TestCsv:
    def test_empty(self, tmp_path):
        emit_csv([], tmp_path / "o.csv")
        assert (tmp_path / "o.csv").read_text() == ",".join(CSV_HEADER) + "\n"

    def test_one_row(self, tmp_path):
        row = AggregateRow("s", 5.0, "m", 1 / 3, 0.1, {"prop1": 0.2}, 3, 7, 0)
        emit_csv([row], tmp_path / "o.csv")
        lines = (tmp_path / "o.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1] == "s,5,m,0.3333333333,0.1,0.2,,,,,3,7,0"

    def test_byte_stable(self, tmp_path):
        rows = run_scenario(parse_scenario(BASE))
        emit_csv(rows, tmp_path / "a.csv")
        emit_csv(rows, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_trials_sidecar(self, tmp_path):
        records = run_trials(parse_scenario(BASE))
        emit_trials_csv(records, tmp_path / "t.csv")
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + len(records) == 1 + 2 * 20 * 3


@pytest.mark.acceptance
class TestFigureShapes:
    def test_fig1b_known_decoder_nonincreasing(self, full_run):
        ok, where = nonincreasing_within_bands(curve(full_run("fig1b"), "icp_mdd_known"))
        assert ok, where

    def test_fig1c_prop1_flat(self, full_run):
        vals = [r.bounds["prop1"] for r in curve(full_run("fig1c"), "icp_mdd_known")]
        assert max(vals) - min(vals) < 0.1

    @pytest.mark.xfail(strict=True, reason=(
        "mii_known decides from all environments jointly, which the single-environment bound does not cover "
        "(fig1c, shifted means); p_err = 0 rows also have a zero Wald standard error"))
    def test_soundness_sweep_as_stated(self, full_run):
        bad = []
        for name in builtin_names():
            bad += [(name, *v) for v in soundness_violations(full_run(name))]
        assert not bad, bad

    def test_soundness_exact_binomial(self, full_run):
        # one-sided binomial tail at the 3-sigma level, for decoders other than mii_known
        alpha = stats.norm.sf(3.0)
        for name in builtin_names():
            for r in full_run(name):
                if r.collisions or r.method == "mii_known":
                    continue
                k = round(r.p_err * r.trials)
                for b, v in r.bounds.items():
                    if v is not None:
                        assert stats.binom.cdf(k, r.trials, v) >= alpha, (name, r.grid_value, r.method, b)

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devtox.data import (
    DatasetParseError,
    Sim1Config,
    Sim2Config,
    format_dataset,
    parse_dataset,
    read_dataset,
    sim1_true_curves,
    sim2_true_correlations,
    simulate_sim1,
    simulate_sim2,
    write_dataset,
    write_truth,
)
from devtox.distributions import logistic
from devtox.model import Dataset, DamRecord


class TestParse:
    def test_single_row(self):
        data = parse_dataset("dose,m,R,y\n0,12,1,0")
        assert data.records == (DamRecord(0.0, 12, 1, 0),)

    def test_rejects_impossible_counts(self):
        with pytest.raises(DatasetParseError, match="row 3: R \\+ y = 7 exceeds m = 5"):
            parse_dataset("dose,m,R,y\n0,12,1,0\n0,5,4,3\n")

    def test_reports_every_bad_row(self):
        with pytest.raises(DatasetParseError) as err:
            parse_dataset("dose,m,R,y\nabc,3,1,0\n0,3,1,0\n1,0,0,0\n1,4,1.5,0\n")
        msg = str(err.value)
        assert "row 2" in msg and "row 4" in msg and "row 5" in msg and "row 3" not in msg

    def test_missing_column(self):
        with pytest.raises(DatasetParseError, match="missing column.*y"):
            parse_dataset("dose,m,R\n0,3,1\n")

    @pytest.mark.parametrize("text", ["", "\n\n", "dose,m,R,y\n"])
    def test_empty(self, text):
        with pytest.raises(DatasetParseError, match="empty"):
            parse_dataset(text)

    def test_short_row(self):
        with pytest.raises(DatasetParseError, match="row 2: expected 4 fields"):
            parse_dataset("dose,m,R,y\n0,3,1\n")

    def test_column_order_and_blank_lines(self):
        data = parse_dataset("y,R,m,dose\n\n1,2,10,0.5\n\n")
        assert data.records == (DamRecord(0.5, 10, 2, 1),)

    def test_integer_valued_floats_accepted(self):
        assert parse_dataset("dose,m,R,y\n1,10.0,2,0\n").records[0].m == 10

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0, 100, allow_nan=False), st.integers(1, 40),
                              st.integers(0, 40), st.integers(0, 40)), min_size=1, max_size=20))
    def test_round_trip(self, rows):
        recs = [DamRecord(d, m, min(R, m), min(y, m - min(R, m))) for d, m, R, y in rows]
        data = Dataset(tuple(recs))
        assert parse_dataset(format_dataset(data)) == data

    def test_file_round_trip(self, tmp_path):
        data = Dataset.from_arrays([0, 1.25], [10, 12], [1, 3], [2, 0])
        assert read_dataset(write_dataset(data, tmp_path / "d.csv")) == data


class TestSim1:
    def test_weights_on_simplex(self):
        cfg = Sim1Config()
        w = cfg.weights(np.asarray(cfg.doses))
        assert np.all(w > 0)
        assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-15)

    def test_true_curves_have_interior_dip(self):
        truth = sim1_true_curves(Sim1Config())
        for curve in (truth.M, truth.r):
            assert curve[1:-1].min() < min(curve[0], curve[-1])

    def test_curves_agree_with_replicate_dams(self):
        cfg = Sim1Config(n_dams=5 * 40_000)
        sim = simulate_sim1(cfg, np.random.default_rng(0))
        data = sim.data
        truth = sim1_true_curves(cfg, cfg.doses)
        for g, x in enumerate(cfg.doses):
            sel = data.dose == x
            m, R, y = data.m[sel], data.R[sel], data.y[sel]
            for obs, target in ((R / m, truth.D[g]), ((R + y) / m, truth.r[g])):
                assert abs(obs.mean() - target) < 3 * obs.std() / math.sqrt(len(obs))

    def test_even_split_and_valid_records(self):
        sim = simulate_sim1(Sim1Config(n_dams=102), np.random.default_rng(1))
        assert sim.data.group_sizes.tolist() == [21, 21, 20, 20, 20]
        assert np.all(sim.data.m >= 1)

    def test_deterministic(self):
        a = simulate_sim1(Sim1Config(), np.random.default_rng(2)).data
        b = simulate_sim1(Sim1Config(), np.random.default_rng(2)).data
        assert a == b

    def test_config_checks(self):
        with pytest.raises(ValueError, match="dispersion"):
            Sim1Config(dispersion_coef=((0.1, -0.1), (0.1, 0.0)))
        with pytest.raises(ValueError):
            Sim1Config(doses=(0.0, 0.0))

    def test_json_round_trip(self, tmp_path):
        cfg = Sim1Config(n_dams=50)
        cfg.to_json(tmp_path / "c.json")
        assert Sim1Config.from_json(tmp_path / "c.json") == cfg


def _beta_square_mean(mean, lam):
    a, b = lam * mean, lam * (1 - mean)
    return a * (a + 1) / ((a + b) * (a + b + 1))


class TestSim2:
    def test_first_stage_correlation(self):
        cfg = Sim2Config()
        lam = cfg.dispersion(np.asarray(cfg.doses))[:, 0]
        assert np.allclose(sim2_true_correlations(cfg)[1], 1 / (1 + lam), rtol=1e-12)

    def test_category_correlations_from_beta_moments(self):
        cfg = Sim2Config()
        d = np.asarray(cfg.doses)
        mu = logistic(cfg.logits(d))
        lam = cfg.dispersion(d)
        alive_sq = _beta_square_mean(1 - mu[:, 0], lam[:, 0])
        expect = {
            2: (alive_sq * _beta_square_mean(mu[:, 1], lam[:, 1]), (1 - mu[:, 0]) * mu[:, 1]),
            3: (alive_sq * _beta_square_mean(1 - mu[:, 1], lam[:, 1]), (1 - mu[:, 0]) * (1 - mu[:, 1])),
        }
        corr = sim2_true_correlations(cfg)
        for j, (both, p) in expect.items():
            assert np.allclose(corr[j], (both - p * p) / (p * (1 - p)), rtol=1e-10)

    def test_death_rate_matches_logit(self):
        cfg = Sim2Config(n_dams=100_000)
        sim = simulate_sim2(cfg, np.random.default_rng(3))
        data = sim.data
        for x in cfg.doses:
            sel = data.dose == x
            ratio = data.R[sel] / data.m[sel]
            target = logistic(cfg.logits(x))[0]
            assert abs(ratio.mean() - target) < 3 * ratio.std() / math.sqrt(len(ratio))

    def test_large_dispersion_approaches_binomial(self):
        cfg = Sim2Config(doses=(1.0,), n_dams=50_000, dispersion_coef=((1e7, 0.0), (1e7, 0.0)))
        sim = simulate_sim2(cfg, np.random.default_rng(4))
        m, R = sim.data.m, sim.data.R
        p = logistic(cfg.logits(1.0))[0]
        resid = (R - m * p) ** 2 / (m * p * (1 - p))
        assert abs(resid.mean() - 1) < 0.03

    def test_truth_and_outputs(self, tmp_path):
        sim = simulate_sim2(Sim2Config(), np.random.default_rng(5))
        t = sim.truth
        assert np.allclose(t.r, 1 - (1 - t.D) * (1 - t.M))
        assert len(sim.data) == 150
        write_truth(sim, tmp_path)
        with open(tmp_path / "truth_correlations.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 * 6
        assert (tmp_path / "truth_curves.csv").read_text().startswith("dose,D,M,r\n0.0,")

    def test_deterministic(self):
        a = simulate_sim2(Sim2Config(), np.random.default_rng(6)).data
        b = simulate_sim2(Sim2Config(), np.random.default_rng(6)).data
        assert a == b

    def test_config_checks(self):
        with pytest.raises(ValueError, match="dispersion"):
            Sim2Config(dispersion_coef=((1.0, -1.0), (1.0, 0.0)))

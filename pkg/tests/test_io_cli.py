"""CSV ingestion, outlier injection, result documents, grid export, and
the CLI surface (subcommands, exit codes, byte determinism)."""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import contamix as cm
from contamix import data_io
from contamix.cli import main as cli_main
from contamix.densities import ComponentParams, MixtureModel, mixture_loglik
from contamix.exceptions import DataError, DomainError

CORRUPT_DIR = Path(__file__).parent / "data" / "corrupt"


class TestLoadCsv:
    def test_wine_fixture(self):
        data = data_io.load_csv(data_io.fixture_path("wine"), label_col="cultivar")
        assert data.n == 178
        assert data.p == 13
        assert set(np.unique(data.labels)) == {0, 1, 2}

    def test_every_corrupt_fixture_rejected(self):
        fixtures = sorted(CORRUPT_DIR.glob("*.csv"))
        assert len(fixtures) >= 6
        for path in fixtures:
            with pytest.raises(DataError):
                data_io.load_csv(path)

    def test_error_carries_location(self):
        with pytest.raises(DataError) as exc:
            data_io.load_csv(CORRUPT_DIR / "non_numeric.csv")
        assert "row 1" in str(exc.value)
        assert "'b'" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            data_io.load_csv(tmp_path / "nope.csv")

    def test_roundtrip_with_labels_and_flags(self, tmp_path):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=3))
        path = tmp_path / "sim.csv"
        data_io.write_csv(path, data)
        back = data_io.load_csv(path, label_col="label", bad_col="bad")
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.labels, data.labels)
        np.testing.assert_array_equal(back.bad_truth, data.bad_truth)


class TestInjectPcOutlier:
    def test_zero_multiples_copies_row(self, rng):
        data = cm.Dataset(x=rng.standard_normal((30, 4)))
        out = data_io.inject_pc_outlier(data, 5, [0.0, 0.0])
        assert out.n == 31
        np.testing.assert_allclose(out.x[-1], data.x[5], atol=1e-12)
        assert out.bad_truth[-1] and not out.bad_truth[:-1].any()

    def test_pc_score_shift_equals_multiple(self, rng):
        x = rng.standard_normal((60, 5)) @ rng.standard_normal((5, 5))
        data = cm.Dataset(x=x)
        mult = 7.5
        out = data_io.inject_pc_outlier(data, 3, [mult])
        mean = x.mean(axis=0)
        sd = x.std(axis=0, ddof=1)
        z = (x - mean) / sd
        corr = z.T @ z / (x.shape[0] - 1)
        vals, vecs = np.linalg.eigh(corr)
        pc1 = vecs[:, np.argmax(vals)]
        score = lambda row: ((row - mean) / sd) @ pc1
        # eigenvector sign is arbitrary; the score shift magnitude is not
        assert abs(score(out.x[-1]) - score(x[3])) == pytest.approx(mult, abs=1e-9)

    def test_degenerate_shape_rejected(self, rng):
        data = cm.Dataset(x=rng.standard_normal((4, 6)))
        with pytest.raises(DomainError):
            data_io.inject_pc_outlier(data, 0, [1.0])


class TestDensityGrid:
    def _model(self):
        c1 = ComponentParams(pi=0.6, lam=0.8, eta=10.0, mu=np.array([0.0, 0.0]),
                             alpha=np.array([1.0, -0.5]),
                             sigma=np.array([[1.0, 0.2], [0.2, 1.0]]), family="sn")
        c2 = ComponentParams(pi=0.4, lam=0.9, eta=5.0, mu=np.array([4.0, 4.0]),
                             alpha=np.array([-1.0, 0.5]), sigma=np.eye(2),
                             family="sn")
        return MixtureModel(family="sn", components=(c1, c2))

    def test_single_point_equals_exponentiated_loglik(self):
        model = self._model()
        table = data_io.export_density_grid(model, (0, 1), (0.7, 0.7, 1))
        assert table.shape == (1, 3)
        x = np.array([[0.7, 0.7]])
        assert table[0, 2] == pytest.approx(
            np.exp(mixture_loglik(x, model)), rel=1e-9)

    def test_symmetric_model_point_reflection(self):
        comp = ComponentParams(pi=1.0, lam=0.8, eta=6.0, mu=np.zeros(2),
                               alpha=np.zeros(2), sigma=np.eye(2), family="sal")
        model = MixtureModel(family="sal", components=(comp,))
        table = data_io.export_density_grid(model, (0, 1), (-2.0, 2.0, 9))
        dens = table[:, 2].reshape(9, 9)
        np.testing.assert_allclose(dens, dens[::-1, ::-1], rtol=1e-8)

    def test_contaminated_component_crossover_along_ray(self):
        # inner region dominated by the good part, far field by the bad part
        from contamix.densities import sn_logpdf
        c = ComponentParams(pi=1.0, lam=0.8, eta=10.0, mu=np.zeros(2),
                            alpha=np.array([1.0, 0.5]),
                            sigma=np.array([[1.0, 0.3], [0.3, 1.0]]), family="sn")
        direction = np.array([1.0, -0.6])
        direction /= np.linalg.norm(direction)
        radii = np.linspace(0.0, 12.0, 60)
        diff = []
        for r in radii:
            x = c.mu + r * direction
            good = np.log(c.lam) + sn_logpdf(x, c.mu, c.sigma, c.alpha)
            bad = np.log1p(-c.lam) + sn_logpdf(x, c.mu, c.eta * c.sigma,
                                               np.sqrt(c.eta) * c.alpha)
            diff.append(good - bad)
        diff = np.asarray(diff)
        assert diff[0] > 0          # good part dominates at the centre
        assert diff[-1] < 0         # bad part dominates far out
        assert np.any(np.diff(np.sign(diff)) != 0)


class TestResultDocument:
    def test_roundtrip_bit_exact(self, tmp_path):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=6))
        fit = cm.fit_sal(data, 2, cm.FitConfig(seed=1, n_starts=1, max_iter=150))
        truth = data.truth_partition()
        ari = cm.adjusted_rand_index(truth, cm.partition_with_bad(
            fit.hard_labels, fit.bad_flags))
        doc = data_io.result_document(fit, "sal", 2, {"seed": 1}, ari=ari, seed=1)
        path = tmp_path / "result.json"
        data_io.write_result_document(path, doc)
        back = data_io.read_result_document(path)
        assert back["bic"] == fit.bic
        assert back["ari"] == ari
        model2 = data_io.model_from_doc(back["model"])
        assert mixture_loglik(data, model2) == mixture_loglik(data, fit.model)
        # re-serialization is byte-identical
        path2 = tmp_path / "result2.json"
        data_io.write_result_document(path2, back)
        assert path.read_bytes() == path2.read_bytes()


def run_cli(args):
    return cli_main([str(a) for a in args])


class TestCli:
    def test_full_pipeline(self, tmp_path):
        data_csv = tmp_path / "data.csv"
        result = tmp_path / "result.json"
        grid_csv = tmp_path / "grid.csv"
        assert run_cli(["simulate", "--family", "sal", "--seed", "7",
                        "--out", data_csv]) == 0
        assert run_cli(["fit", "--family", "sal", "--input", data_csv,
                        "--g", "2", "--seed", "1", "--n-starts", "2",
                        "--max-iter", "1200", "--label-col", "label",
                        "--bad-col", "bad", "--out", result]) == 0
        doc = json.loads(result.read_text())
        assert doc["chosen_g"] == 2
        assert doc["schema_version"] == 1
        assert "ari" in doc
        assert run_cli(["evaluate", "--result", result, "--input", data_csv,
                        "--label-col", "label", "--bad-col", "bad"]) == 0
        assert run_cli(["grid", "--result", result, "--dims", "0", "1",
                        "--lo", "-4", "--hi", "9", "--steps", "12",
                        "--out", grid_csv]) == 0
        lines = grid_csv.read_text().strip().splitlines()
        assert len(lines) == 1 + 144

    def test_missing_input_exits_2_and_writes_nothing(self, tmp_path):
        result = tmp_path / "never.json"
        code = run_cli(["fit", "--family", "sal", "--input",
                        tmp_path / "absent.csv", "--g", "2", "--out", result])
        assert code == 2
        assert not result.exists()

    def test_mandatory_seed_for_simulate(self, tmp_path):
        with pytest.raises(SystemExit):
            run_cli(["simulate", "--family", "sal", "--out", tmp_path / "x.csv"])

    def test_bad_config_exits_4(self, tmp_path):
        data_csv = tmp_path / "d.csv"
        run_cli(["simulate", "--family", "sal", "--seed", "3", "--out", data_csv])
        code = run_cli(["fit", "--family", "sal", "--input", data_csv,
                        "--g", "4", "--g-max", "2", "--out", tmp_path / "r.json"])
        assert code == 4

    def test_byte_determinism_across_runs_and_threads(self, tmp_path):
        # same seed and config must give identical bytes, also under a
        # different BLAS thread count
        data_csv = tmp_path / "data.csv"
        run_cli(["simulate", "--family", "sal", "--seed", "11", "--out", data_csv])
        outs = []
        for name, threads in (("a", "1"), ("b", "4"), ("c", "1")):
            sub = tmp_path / name
            sub.mkdir()
            env = dict(os.environ, OMP_NUM_THREADS=threads,
                       OPENBLAS_NUM_THREADS=threads)
            subprocess.run(
                [sys.executable, "-m", "contamix.cli", "fit", "--family", "sal",
                 "--input", "../data.csv", "--g", "2", "--seed", "5",
                 "--n-starts", "2", "--max-iter", "400", "--label-col", "label",
                 "--out", "result.json"],
                check=False, env=env, capture_output=True, cwd=sub)
            outs.append((sub / "result.json").read_bytes())
        assert outs[0] == outs[1] == outs[2]

import numpy as np
import pytest

from emtransfer.bench import (
    CellStats,
    ExperimentConfig,
    ExperimentReport,
    baseline_gmlvq_transfer,
    baseline_naive,
    baseline_retrain,
    fit_glvq_transfer,
    glvq_transfer_objective,
    read_config_file,
    read_report_csv,
    run_experiment,
    source_training_config,
    write_report_csv,
)
from emtransfer.datagen import exclude_classes, subsample_balanced, toy_source, toy_target
from emtransfer.dataset import write_dataset_csv
from emtransfer.errors import InvalidInputError
from emtransfer.lgmm import PrecisionPolicy
from emtransfer.lvq import LvqTrainingConfig, to_lgmm, train_gmlvq
from emtransfer.transfer import identity_map


@pytest.fixture(scope="module")
def toy_pieces():
    source = toy_source(100, seed=0)
    gmlvq = train_gmlvq(source, source_training_config("toy", 0))
    model = to_lgmm(gmlvq)
    target_test = toy_target(100, seed=1)
    return source, gmlvq, model, target_test


POLICY = PrecisionPolicy.pseudo_determinant()


class TestBaselines:
    def test_naive_on_matching_distribution_is_source_error(self, toy_pieces):
        source, _, model, _ = toy_pieces
        same_dist = toy_source(100, seed=9)
        naive = baseline_naive(model, same_dist, POLICY)
        source_err = baseline_naive(model, source, POLICY)
        assert abs(naive - source_err) < 0.06

    def test_naive_on_rotated_target_fails(self, toy_pieces):
        _, _, model, target_test = toy_pieces
        # Two of three classes land on the wrong side: 0.67 +- 0.14.
        assert 0.53 < baseline_naive(model, target_test, POLICY) < 0.81

    def test_retrain_misses_excluded_class(self, toy_pieces):
        _, _, _, target_test = toy_pieces
        pool = exclude_classes(toy_target(100, seed=3), [3])
        train = subsample_balanced(pool, 16, seed=0)
        err = baseline_retrain(train, target_test, shared_precision=True, policy=POLICY)
        assert err >= 1.0 / 3.0 - 0.05

    def test_retrain_full_data_matches_generator_difficulty(self, toy_pieces):
        _, _, _, target_test = toy_pieces
        train = toy_target(100, seed=5)
        err = baseline_retrain(train, target_test, shared_precision=True, policy=POLICY)
        assert err < 0.12

    def test_gmlvq_transfer_gradient_matches_finite_differences(self, toy_pieces):
        _, gmlvq, _, _ = toy_pieces
        target = subsample_balanced(exclude_classes(toy_target(50, seed=7), [3]), 10, seed=1)
        objective = glvq_transfer_objective(gmlvq, target)
        rng = np.random.default_rng(2)
        h = (identity_map(2, 2) + 0.3 * rng.standard_normal((2, 2))).ravel()
        value, grad = objective(h)
        step = 1e-6
        for i in range(h.size):
            up, down = h.copy(), h.copy()
            up[i] += step
            down[i] -= step
            fd = (objective(up)[0] - objective(down)[0]) / (2 * step)
            assert abs(fd - grad[i]) < 1e-4 * max(1.0, abs(fd))

    def test_gmlvq_transfer_on_aligned_data(self, toy_pieces):
        source, gmlvq, _, _ = toy_pieces
        # Target identical to the source distribution: H=I is already right.
        train = subsample_balanced(toy_source(100, seed=11), 30, seed=0)
        test = toy_source(100, seed=12)
        err = baseline_gmlvq_transfer(gmlvq, train, test)
        baseline = np.mean(
            np.argmin(np.abs(test.points[:, :1] - np.array([[-1.0, 0.0, 1.0]])), axis=1) + 1
            != test.labels
        )
        assert err <= baseline + 0.05

    def test_fit_glvq_transfer_starts_from_identity_padding(self, toy_pieces):
        _, gmlvq, _, _ = toy_pieces
        train = subsample_balanced(exclude_classes(toy_target(50, seed=8), [3]), 8, seed=2)
        H = fit_glvq_transfer(gmlvq, train)
        assert H.shape == (2, 2)
        assert np.all(np.isfinite(H))


@pytest.fixture(scope="module")
def small_config():
    return ExperimentConfig(dataset="toy", methods=("naive", "em", "retrain"),
                            n_grid=(4, 8), folds=2, exclude_classes=(3,), seed=5)


@pytest.fixture(scope="module")
def small_report(small_config):
    return run_experiment(small_config)


class TestRunExperiment:
    def test_report_shape(self, small_report):
        assert small_report.methods == ("naive", "em", "retrain")
        assert small_report.n_grid == (4, 8)
        cell = small_report.cell("em", 4)
        assert cell.folds == 2
        assert cell.failures == 0
        assert 0.0 <= cell.err_mean <= 1.0
        assert cell.err_std >= 0.0

    def test_naive_constant_across_n(self, small_report):
        a = small_report.cell("naive", 4)
        b = small_report.cell("naive", 8)
        assert a.err_mean == b.err_mean
        assert a.err_std == b.err_std

    def test_deterministic_reports(self, small_config, small_report, tmp_path):
        # Bitwise determinism holds for everything except the wall-clock
        # measurements, which are genuine timings.
        again = run_experiment(small_config)
        for key, cell in small_report.cells.items():
            other = again.cells[key]
            assert repr(cell.err_mean) == repr(other.err_mean)
            assert repr(cell.err_std) == repr(other.err_std)
            assert (cell.folds, cell.failures) == (other.folds, other.failures)

    def test_csv_writer_deterministic(self, small_report, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report_csv(small_report, p1)
        write_report_csv(small_report, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_failures_counted_not_dropped(self):
        # The excluded pool holds 4 points, so the N=8 draw must fail in
        # every fold and be recorded rather than silently skipped.
        config = ExperimentConfig(dataset="toy", methods=("naive", "em"),
                                  n_grid=(4, 8), folds=2, exclude_classes=(3,),
                                  n_per_class=2, seed=0)
        report = run_experiment(config)
        good = report.cell("em", 4)
        assert good.folds == 2 and good.failures == 0
        bad = report.cell("em", 8)
        assert bad.folds == 0 and bad.failures == 2
        assert np.isnan(bad.err_mean)

    def test_csv_dataset_mode(self, tmp_path):
        src, tgt = tmp_path / "src.csv", tmp_path / "tgt.csv"
        write_dataset_csv(toy_source(40, seed=0), src)
        write_dataset_csv(toy_target(40, seed=1), tgt)
        config = ExperimentConfig(dataset="csv", methods=("naive", "em"),
                                  n_grid=(4,), folds=2, seed=0,
                                  source_csv=str(src), target_csv=str(tgt))
        report = run_experiment(config)
        assert report.cell("em", 4).folds == 2

    def test_invalid_configs_rejected(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig(dataset="nope")
        with pytest.raises(InvalidInputError):
            ExperimentConfig(methods=("em", "bogus"))
        with pytest.raises(InvalidInputError):
            ExperimentConfig(n_grid=(8, 4))
        with pytest.raises(InvalidInputError):
            ExperimentConfig(folds=1)
        with pytest.raises(InvalidInputError):
            ExperimentConfig(dataset="csv")


class TestReportCsv:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        methods = ("em", "retrain")
        n_grid = (4, 16)
        cells = {}
        for m in methods:
            for n in n_grid:
                cells[(m, n)] = CellStats(*rng.uniform(size=4).tolist(), 10, 0)
        report = ExperimentReport(methods, n_grid, cells)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        loaded = read_report_csv(path)
        assert loaded.methods == methods
        assert loaded.n_grid == n_grid
        for key, cell in cells.items():
            assert loaded.cells[key] == cell

    def test_empty_report_writes_header_only(self, tmp_path):
        report = ExperimentReport(("em",), (), {})
        path = tmp_path / "empty.csv"
        write_report_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("n,err_mean_em,err_std_em,time_mean_em,time_std_em")

    def test_malformed_report_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("n,err_mean_em\n4,0.5\n")
        with pytest.raises(InvalidInputError):
            read_report_csv(path)


class TestConfigFile:
    def test_parse_full_config(self, tmp_path):
        text = """
        # toy benchmark
        dataset = toy
        methods = naive, em
        n_grid = 4, 8
        folds = 3
        exclude_classes = 3
        seed = 9
        epsilon = 1e-4
        """
        path = tmp_path / "bench.cfg"
        path.write_text(text)
        config = read_config_file(path)
        assert config.dataset == "toy"
        assert config.methods == ("naive", "em")
        assert config.n_grid == (4, 8)
        assert config.folds == 3
        assert config.exclude_classes == (3,)
        assert config.seed == 9
        assert config.epsilon == 1e-4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("dataset = toy\nbogus = 1\n")
        with pytest.raises(InvalidInputError):
            read_config_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad2.cfg"
        path.write_text("folds = three\n")
        with pytest.raises(InvalidInputError):
            read_config_file(path)

import math

import numpy as np
import pytest

from angmeas.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    Row,
    angle_label,
    emit,
    expansion_rep,
    ks_tail_size,
    read_config_file,
    read_rows,
    run_expansion_experiment,
    run_identity_suite,
    run_limit_experiment,
    stream_seed,
    summary_path,
)
from angmeas.empirical import phi_true, scaled_prob_C
from angmeas.geometry import HALF_PI

TINY = dict(pairs=((300, 15), (600, 30)), reps=3, theta_points=17, u_points=9)
TINY_LIMIT = dict(fields=300, resolution=40, ks_n=2000, ks_k=40, ks_reps=30)


def test_defaults_valid():
    cfg = ExperimentConfig()
    assert cfg.theta_grid.size == 129
    assert math.pi / 4 in cfg.theta_grid
    assert cfg.theta_grid[0] == 0.0 and cfg.theta_grid[-1] == HALF_PI


def test_validation_names_fields():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(alpha=1.5, reps=0, theta_points=10)
    assert set(exc.value.fields) == {"alpha", "reps", "theta_points"}
    assert not exc.value.k_exceeds_n
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(pairs=((10, 20),))
    assert exc.value.k_exceeds_n


def test_from_mapping_and_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# ladder\nalpha = 0.3\np = inf\npairs = 100:10, 200:20\nks_k = auto\n\nreps=4\n")
    cfg = ExperimentConfig.from_file(f, {"reps": "7"})
    assert cfg.alpha == 0.3 and cfg.p == math.inf and cfg.reps == 7
    assert cfg.pairs == ((100, 10), (200, 20)) and cfg.ks_k is None
    cfg = ExperimentConfig.from_mapping({"n": "100,200", "k": "10"})
    assert cfg.pairs == ((100, 10), (200, 10))


def test_config_file_errors(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("alpha 0.3\n")
    with pytest.raises(ConfigError, match="line 1"):
        read_config_file(f)
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"alpha": "abc", "nonsense": "1"})
    assert set(exc.value.fields) == {"alpha", "nonsense"}
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")


def test_stream_seed():
    assert stream_seed(1, 2, 3) == stream_seed(1, 2, 3)
    assert len({stream_seed(1, 2, r) for r in range(100)}) == 100
    assert stream_seed(1, 2, 3) != stream_seed(2, 2, 3)


def test_angle_label():
    assert angle_label(HALF_PI) == "pi/2"
    assert angle_label(3 * math.pi / 8) == "3*pi/8"
    assert angle_label(0.0) == "0"


def test_emit_empty_and_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    emit(ExperimentReport(), path)
    assert path.read_bytes() == (",".join(CSV_HEADER) + "\n").encode()
    rows = [
        Row("x", 0, 10, 2, math.inf, 0.5, "s", 1 / 3, 2**63 + 5),
        Row("x", 1, 10, 2, 1.0, 0.5, "t", -1e-300, 0),
    ]
    emit(ExperimentReport(rows=rows, verdicts={"v": True}), path)
    assert read_rows(path) == rows
    assert b"\r" not in path.read_bytes()
    assert "PASS v" in summary_path(path).read_text()


def test_emit_reports_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        emit(ExperimentReport(), tmp_path / "missing" / "r.csv")


def test_identity_suite_passes():
    rep = run_identity_suite(ExperimentConfig())
    assert rep.ok, rep.failures
    assert len(rep.rows) == 9


def test_expansion_rows_and_replay():
    cfg = ExperimentConfig(**TINY)
    rep = run_expansion_experiment(cfg)
    assert len(rep.rows) == cfg.reps * 4 * len(cfg.pairs)
    assert np.all(rep.values("cor1_top") == 0.0)
    r = rep.rows[5]
    again = expansion_rep(cfg.model, cfg.p, r.n, r.k, r.seed, cfg.theta_grid, cfg.u_grid)
    assert again[r.statistic] == r.value


def test_byte_identical_regardless_of_workers(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit(run_expansion_experiment(ExperimentConfig(**TINY, workers=1)), a)
    emit(run_expansion_experiment(ExperimentConfig(**TINY, workers=2)), b)
    assert a.read_bytes() == b.read_bytes()
    assert summary_path(a).read_bytes() == summary_path(b).read_bytes()


def test_limit_experiment_shape(tmp_path):
    cfg = ExperimentConfig(**TINY_LIMIT)
    rep = run_limit_experiment(cfg)
    assert len(rep.values("alpha[pi/2]")) == cfg.fields
    assert len(rep.values("mc[pi/2]")) == cfg.ks_reps
    assert rep.value("ks_k") == 40
    for name in ("cov_within_3se", "var_W_within_3se", "ks_one_sample", "ks_two_sample"):
        assert name in rep.verdicts
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit(rep, a)
    emit(run_limit_experiment(cfg.replace(workers=2)), b)
    assert a.read_bytes() == b.read_bytes()


def test_ks_tail_size_rule(model):
    sd = 0.5
    k, bias = ks_tail_size(model, 1.0, 32000, sd)
    phi = phi_true(model, 1.0, HALF_PI)
    nxt = math.sqrt(k + 10) * abs(scaled_prob_C(model, 1.0, 32000, k + 10, HALF_PI) - phi)
    assert bias <= 0.05 * sd < nxt

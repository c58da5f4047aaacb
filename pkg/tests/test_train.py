import warnings

import numpy as np
import pytest

from mlft import train
from mlft.config import parse_config, with_overrides
from mlft.levels import generate_samples


def run_args(cfg, seed=0):
    ev = train.build_eval_data(cfg.hierarchy, cfg.n_test, cfg.n_validation, seed)
    return cfg.network, cfg.optimizer, cfg.training, ev, seed


def test_evaluate_clamps_negative_gap():
    pred = lambda v: np.zeros_like(v)
    test_v, test_u = np.zeros((2, 4)), np.ones((2, 4))
    notes = []
    with pytest.warns(UserWarning, match="clamped"):
        g_test, g_train, g = train.evaluate(pred, test_v, test_u, np.zeros((1, 4)), 3 * np.ones((1, 4)), notes)
    assert (g_test, g_train, g) == (2.0, 6.0, 0.0)
    assert len(notes) == 1
    assert train.evaluate(pred, test_v, test_u) == (2.0, float("nan"), 2.0) or np.isnan(
        train.evaluate(pred, test_v, test_u)[1])
    with pytest.raises(ValueError):
        train.evaluate(pred, np.zeros((0, 4)), np.zeros((0, 4)))


def test_evaluate_vec2_mean():
    pred = lambda v: v
    g_test, _, g = train.evaluate(pred, np.zeros((2, 2)), np.array([[3.0, 4.0], [0.0, 1.0]]))
    assert g_test == g == 3.0


@pytest.fixture(scope="module")
def mlft_run():
    from conftest import TINY
    cfg = parse_config(TINY)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cfg, train.run_mlft(cfg.hierarchy, (8, 2), *run_args(cfg))


def test_mlft_continuity_and_shape(mlft_run):
    cfg, rep = mlft_run
    assert rep.continuity == [True]
    assert len(rep.curves) == 2 and len(rep.level_g) == 2 and len(rep.level_gaps) == 1
    assert rep.curves[1].iterations[0] == 0
    assert all(np.isfinite(rep.curves[1].monitor_mse))
    assert len(rep.networks) == 1


def test_mlft_deterministic(mlft_run, tmp_path):
    cfg, rep = mlft_run
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = train.run_mlft(cfg.hierarchy, (8, 2), *run_args(cfg))
    a = train.write_report(rep, tmp_path / "a", cfg.hash)
    b = train.write_report(again, tmp_path / "b", cfg.hash)
    for name in ("metrics.csv", "levels.csv", "loss_curve_l1.csv", "loss_curve_l2.csv", "net_1.ckpt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_result(mlft_run):
    cfg, rep = mlft_run
    other = with_overrides(cfg, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r1 = train.run_mlft(other.hierarchy, (8, 2), *run_args(other, 1))
    assert r1.g_test != rep.g_test


def test_report_round_trip(mlft_run, tmp_path):
    cfg, rep = mlft_run
    out = train.write_report(rep, tmp_path / "r", cfg.hash, cfg.text)
    kv = train.read_report(out)
    assert kv["config_hash"] == cfg.hash
    assert float(kv["g"]) == rep.g
    assert kv["counts"] == "8,2"
    assert (out / "config.ini").read_text() == cfg.text


def test_ml2mc_sum_of_networks(tiny_cfg):
    cfg = tiny_cfg
    args = run_args(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = train.run_ml2mc(cfg.hierarchy, (8, 2), *args)
    ev = args[3]
    from mlft import net as nnet
    summed = nnet.predict(rep.networks[0], ev.test.v) + nnet.predict(rep.networks[1], ev.test.v)
    g_test = float(np.mean(np.linalg.norm(ev.test.u[-1] - summed, axis=1)))
    assert rep.g_test == pytest.approx(g_test, rel=1e-12)
    # the two networks are initialized independently
    assert not np.array_equal(rep.networks[0].flat(), rep.networks[1].flat())


def test_single_level_coarse_reports_gap(tiny_cfg):
    cfg = tiny_cfg
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = train.run_counts(cfg.hierarchy, (8, 0), *run_args(cfg))
    assert rep.pipeline == "single" and np.isfinite(rep.e_L) and rep.e_L > 0
    assert np.isnan(rep.g_train) and rep.g == rep.g_test
    with pytest.raises(ValueError):
        train.run_counts(cfg.hierarchy, (0, 0), *run_args(cfg))
    with pytest.raises(ValueError):
        train.run_mlft(cfg.hierarchy, (8, 0), *run_args(cfg))


def test_iterations_to_threshold(mlft_run):
    _, rep = mlft_run
    mon = rep.curves[-1].monitor_mse
    assert train.iterations_to_threshold(rep, mon[0]) == 0
    assert train.iterations_to_threshold(rep, -1.0) is None
    assert train.iterations_or_cap(rep, -1.0) == rep.curves[-1].iterations[-1] + 1
    assert train.common_threshold([rep, rep], 0.5) == 0.5 * mon[0]


def test_sweep_rows_and_csv(tiny_cfg):
    cfg = tiny_cfg
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = train.sweep_ratio(cfg.hierarchy, 64.0, [0.0, 0.5, 1.0], [0], cfg.network, cfg.optimizer,
                                 cfg.training, lambda s: run_args(cfg, s)[3])
    assert [(r.m1, r.m2) for r in rows] == [(0, 8), (32, 4), (64, 0)]
    text = train.sweep_csv(rows, cfg.hash, {0.5: 0.1, 0.0: 0.3})
    lines = text.strip().splitlines()
    assert len(lines) == 4
    assert lines[2].split(",")[7] == "1" and lines[1].split(",")[7] == "0"

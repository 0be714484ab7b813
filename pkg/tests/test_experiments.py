import numpy as np
import pytest

from w2loc.config import parse_config
from w2loc.experiments import (
    EnsembleMember,
    add_noise,
    build_setup,
    draw_ensemble,
    landscape_metric,
    local_minima,
    record,
    run_landscape,
    run_locate,
    run_method_compare,
    run_noise_table,
    summary_row,
)
from w2loc.locate import CORRECT, DIVERGENCE
from w2loc.wavesim import TraceSet

from small_configs import COMPARE, LANDSCAPE, LOCATE, NOISE_TABLE


def test_local_minima():
    psi = np.array([[3.0, 2.0, 3.0, 3.0],
                    [2.0, 1.0, 2.0, 3.0],
                    [3.0, 2.0, 3.0, 0.5]])
    assert local_minima(psi) == [(1, 1), (2, 3)]
    flat = np.ones((3, 3))
    assert local_minima(flat) == []
    psi[1, 1] = np.nan
    assert (0, 1) not in local_minima(psi)
    assert (2, 3) in local_minima(psi)


def test_add_noise_scale():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 4001)
    clean = TraceSet(t[1], np.vstack([np.sin(7 * t), 3 * np.cos(5 * t)]))
    noisy, sig = add_noise(clean, 0.1, rng)
    np.testing.assert_allclose(sig, [0.1 * np.abs(clean.data[0]).max(), 0.3], rtol=1e-12)
    emp = np.std(noisy.data - clean.data, axis=1)
    np.testing.assert_allclose(emp, sig, rtol=0.05)


def test_landscape_minimum_at_truth():
    cfg = parse_config(LANDSCAPE.replace("x = 26.2", "x = 26").replace("z = 12.4", "z = 12"))
    res = run_landscape(cfg)
    assert res.psi.shape == (5, 7)
    assert res.argmin() == (26.0, 12.0)
    assert res.psi.min() == pytest.approx(0.0, abs=1e-12)
    assert len(local_minima(res.psi)) == 1
    assert res.failures == 0


@pytest.mark.parametrize("metric", ["rld", "krn", "qwnc"])
def test_other_metrics_vanish_at_truth(metric):
    cfg = parse_config(LOCATE)
    setup = build_setup(cfg)
    obs = record(setup, cfg.truth, cfg.receivers)
    f = landscape_metric(metric, obs)
    assert f(obs) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        landscape_metric("l7", obs)


def test_landscape_csv_and_threads(tmp_path):
    cfg = parse_config(LANDSCAPE)
    for d in "ab":
        (tmp_path / d).mkdir()
    run_landscape(cfg, tmp_path / "a")
    run_landscape(cfg, tmp_path / "b", threads=3)
    name = "landscape_qwn2.csv"
    a = (tmp_path / "a" / name).read_bytes()
    assert a == (tmp_path / "b" / name).read_bytes()
    text = a.decode()
    assert "# metric: qwn2" in text and "x,z,psi" in text


def test_locate_noise_free_desk():
    cfg = parse_config(LOCATE)
    res = run_locate(cfg)
    assert res.run.status == "converged"
    assert res.error_final < 0.05
    assert abs(res.run.x_final[2] - 2.6) < 0.01
    assert res.sigma is None


def test_locate_noisy_desk_reproducible():
    text = LOCATE + "\n[noise]\nratio = 0.05\n"
    a = run_locate(parse_config(text))
    b = run_locate(parse_config(text))
    assert a.sigma is not None and np.all(a.sigma > 0)
    np.testing.assert_array_equal(a.run.x_final, b.run.x_final)
    assert a.error_star < 1.0


def test_noise_table_shape_and_common_draws():
    cfg = parse_config(NOISE_TABLE)
    tab = run_noise_table(cfg)
    assert tab.means.shape == (2, 2) and tab.l2.shape == (2,)
    assert tab.lam_star == pytest.approx(1 / 300)
    # larger lambda shrinks the regularized distance on the same draws
    assert np.all(tab.means[1] < tab.means[0])
    assert tab.means[1, 1] < tab.means[1, 0]
    np.testing.assert_array_equal(run_noise_table(cfg).means, tab.means)


def test_ensemble_draws_inside_box():
    cfg = parse_config(COMPARE)
    truths, inits = draw_ensemble(cfg)
    assert truths.shape == inits.shape == (2, 3)
    lo, hi = np.array([20, 9, 2.2]), np.array([30, 15, 2.8])
    assert np.all((truths >= lo) & (truths <= hi)) and np.all((inits >= lo) & (inits <= hi))


def test_method_compare_small(tmp_path):
    cfg = parse_config(COMPARE)
    members = run_method_compare(cfg, tmp_path)
    assert [(m.index, m.method) for m in members] == [(0, "lmf"), (0, "gn"), (1, "lmf"), (1, "gn")]
    assert all(m.verdict == CORRECT for m in members if m.method == "lmf")
    text = (tmp_path / "summary.csv").read_text()
    assert "method,correct,divergence,error_convergence,total,iter_mean,iter_std" in text


def test_summary_row():
    t = np.zeros(3)
    ms = [EnsembleMember(0, t, t, "lmf", "converged", CORRECT, 4, 0.1),
          EnsembleMember(1, t, t, "lmf", "converged", CORRECT, 6, 0.2),
          EnsembleMember(2, t, t, "lmf", "diverged", DIVERGENCE, 20, 9.0),
          EnsembleMember(0, t, t, "gn", "diverged", DIVERGENCE, 2, 9.0)]
    assert summary_row(ms, "lmf") == ("lmf", 2, 1, 0, 3, 5.0, 1.0)
    row = summary_row(ms, "gn")
    assert row[1:5] == (0, 1, 0, 1) and np.isnan(row[5])

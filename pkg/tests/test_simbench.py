import numpy as np
import pytest

from lsir.fit import FitConfig
from lsir.knot_test import TestConfig
from lsir.model import predict
from lsir.simbench import SimCase, gen_case, rep_rng, run_replications, summarize, tau_grid_sim


def test_case_truths():
    assert SimCase(1, 100).truth().to_vector().tolist() == [1.5, 0.0, -1.0, -1.0, 0.0, 0.5]
    assert SimCase(3, 100).truth().beta_rest.tolist() == [-2.0]
    assert SimCase(4, 100, alpha_tilde=0.0).m_true == 0
    assert SimCase(5, 100, alpha_tilde=0.2).m_true == 2
    with pytest.raises(ValueError):
        SimCase(6, 100)
    with pytest.raises(ValueError):
        SimCase(1, 100, "cauchy")


def test_covariate_law():
    d = gen_case(SimCase(1, 200000, "none"), seed=0)
    assert np.abs(d.x[:, 1]).max() <= 3.5
    # X1 and Z are standard normal with correlation 0.5
    assert np.corrcoef(d.x[:, 0], d.z[:, 0])[0, 1] == pytest.approx(0.5, abs=0.01)
    assert d.x[:, 0].std() == pytest.approx(1.0, abs=0.01)
    # 2*Phi(X2) - 1 is uniform on (-1, 1), so X2 has variance 3.5^2 / 3
    assert d.x[:, 1].var() == pytest.approx(3.5**2 / 3, rel=0.02)


@pytest.mark.parametrize("error", ["normal", "schi2", "t4"])
def test_error_laws_are_centred(error):
    sim = SimCase(1, 100000, error)
    d = gen_case(sim, seed=1)
    eps = d.y - predict(d, sim.truth())
    assert abs(eps.mean()) < 0.02
    expected_var = {"normal": 1.0, "schi2": 1.0, "t4": 2.0}[error]
    assert eps.var() == pytest.approx(expected_var, rel=0.1)


def test_replications_are_order_independent():
    a = gen_case(SimCase(2, 50), seed=7, rep_index=3)
    b = gen_case(SimCase(2, 50), seed=7, rep_index=3)
    c = gen_case(SimCase(2, 50), seed=7, rep_index=4)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)
    assert rep_rng(1, 0).integers(1 << 30) != rep_rng(1, 1).integers(1 << 30)


def test_summarize():
    est = np.array([[1.0, 2.0], [3.0, 2.0]])
    se = np.array([[1.0, 0.1], [1.0, 0.1]])
    s = summarize(["a", "b"], np.array([2.0, 2.0]), est, se)
    np.testing.assert_allclose(s.bias, [0.0, 0.0])
    np.testing.assert_allclose(s.sd, [np.sqrt(2.0), 0.0])
    np.testing.assert_allclose(s.cp, [100.0, 100.0])
    assert s.as_dict(100)["params"]["a"]["sd"] == pytest.approx(100 * np.sqrt(2.0))
    assert summarize(["a"], np.array([0.0]), [], []).n_used == 0


def test_run_replications_estimation():
    m = run_replications(SimCase(1, 400), FitConfig(), n_reps=3, seed=1)
    assert m.n_failed == 0
    assert sum(m.selection.values()) == pytest.approx(1.0)
    assert m.oracle.n_used == 3
    table = m.as_dict()
    assert table["metadata"]["scale"] == 100.0
    assert set(table["oracle"]["params"]) == set(SimCase(1, 400).truth().names())


def test_run_replications_testing():
    cfg = TestConfig(tau_grid=tuple(tau_grid_sim()), n_boot=200)
    m = run_replications(SimCase(4, 300, alpha_tilde=1.0), n_reps=5, seed=1, test_cfg=cfg)
    assert m.rejection_rate == 1.0
    assert m.as_dict()["rejection_pct"] == 100.0

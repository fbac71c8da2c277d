import json
from pathlib import Path

import numpy as np
import pytest

from lsir import __version__
from lsir.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, Scaling, dumps, main, parse_tau_grid
from lsir.model import Dataset, Theta, predict

HERE = Path(__file__).parent
DATA = HERE / "data" / "tiny.csv"
GOLDEN = HERE / "golden"
FIT_ARGS = ["--data", str(DATA), "--y", "price", "--x", "dist,age", "--z", "stores", "--negate", "age"]


@pytest.fixture(scope="module")
def fit_doc(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "fit.json"
    assert main(["fit", *FIT_ARGS, "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


def test_fit_golden(fit_doc):
    assert fit_doc.read_text() == (GOLDEN / "fit.json").read_text()


def test_fit_document_contents(fit_doc):
    doc = json.loads(fit_doc.read_text())
    assert doc["version"] == __version__
    assert doc["config"]["seed"] == 1 and doc["config"]["penalty"] == "scad"
    assert doc["columns"]["negate"] == ["age"]
    assert doc["m_hat"] == len(doc["knots"]) == 1
    # the age column is negated, so its index weight flips sign
    assert doc["estimates"]["beta2"] > 0
    for name, (lo, hi) in doc["conf_intervals"].items():
        assert lo <= doc["estimates"][name] <= hi


def test_predict_golden_and_r2(fit_doc, tmp_path):
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(fit_doc), "--data", str(DATA), "--out", str(out)]) == EXIT_OK
    assert out.read_text() == (GOLDEN / "predict.csv").read_text()
    yhat = np.loadtxt(out, skiprows=1)
    y = np.loadtxt(DATA, delimiter=",", skiprows=1)[:, 0]
    r2 = 1 - np.sum((y - yhat) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 == pytest.approx(json.loads(fit_doc.read_text())["r2"], abs=1e-10)


def test_curve_golden(fit_doc, tmp_path):
    out = tmp_path / "curve.tsv"
    assert main(["curve", "--model", str(fit_doc), "--points", "11", "--out", str(out)]) == EXIT_OK
    assert out.read_text() == (GOLDEN / "curve.tsv").read_text()
    rows = [line.split("\t") for line in out.read_text().splitlines()[1:]]
    assert sum(r[0] == "knot" for r in rows) == 1


def test_test_knots_golden(tmp_path):
    out = tmp_path / "test.json"
    args = ["test-knots", *FIT_ARGS, "--boot", "200", "--tau-grid=-2:2:21", "--seed", "3", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert out.read_text() == (GOLDEN / "test.json").read_text()
    doc = json.loads(out.read_text())
    assert doc["reject"] and len(doc["curve"]["tau"]) == 21


def test_simulate_golden(tmp_path):
    out = tmp_path / "sim.json"
    args = ["simulate", "--case", "4", "--n", "200", "--reps", "3", "--alpha-tilde", "0.5", "--boot", "100",
            "--seed", "5", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert out.read_text() == (GOLDEN / "simulate.json").read_text()


def test_standardize_reports_raw_units(fit_doc, tmp_path):
    out = tmp_path / "std.json"
    assert main(["fit", *FIT_ARGS, "--seed", "1", "--standardize", "--out", str(out)]) == EXIT_OK
    raw = json.loads(fit_doc.read_text())
    std = json.loads(out.read_text())
    assert std["standardize"] and std["m_hat"] == raw["m_hat"]
    # bandwidth and lambda are not scale free, so the two fits agree only roughly
    assert std["estimates"]["tau1"] == pytest.approx(raw["estimates"]["tau1"], abs=0.1)
    assert std["r2"] == pytest.approx(raw["r2"], abs=1e-3)


def test_scaling_back_transform_is_exact(rng):
    n = 80
    x = rng.normal(3.0, 2.0, size=(n, 3))
    z = rng.normal(-1.0, 5.0, size=(n, 2))
    sc = Scaling.fit(x, z)
    xs, zs = sc.apply(x, z)
    th = Theta(0.7, [1.2, -0.4], [0.1, 0.9], [0.3, -0.8], 0.5, [0.2, -0.1])
    raw = Theta.from_vector(sc.to_raw(th.to_vector(), 2), 2, 3, 2)
    y0 = np.zeros(n)
    np.testing.assert_allclose(predict(Dataset(y0, x, z), raw), predict(Dataset(y0, xs, zs), th), atol=1e-10)
    jac = sc.jacobian(th.to_vector(), 2)
    h = 1e-6 * rng.normal(size=th.to_vector().size)
    np.testing.assert_allclose(sc.to_raw(th.to_vector() + h, 2) - sc.to_raw(th.to_vector(), 2), jac @ h, atol=1e-10)


def test_exit_codes(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--y", "a", "--x", "b"]) == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x\n1,2\n3,\n")
    assert main(["fit", "--data", str(bad), "--y", "y", "--x", "x"]) == EXIT_DATA
    assert main(["fit", "--data", str(DATA), "--y", "price", "--x", "nope"]) == EXIT_DATA
    assert main(["fit", "--data", str(DATA), "--y", "price", "--x", "dist", "--negate", "stores"]) == EXIT_USAGE
    assert main(["fit", *FIT_ARGS, "--lambda-grid", "a,b"]) == EXIT_USAGE
    assert main(["test-knots", *FIT_ARGS, "--tau-grid", "1:0:5"]) == EXIT_USAGE
    # a constant index column makes the null information matrix singular
    const = tmp_path / "const.csv"
    rng = np.random.default_rng(0)
    rows = np.column_stack([rng.normal(size=50), rng.normal(size=50), np.ones(50)])
    np.savetxt(const, rows, delimiter=",", header="y,x1,x2", comments="")
    assert main(["test-knots", "--data", str(const), "--y", "y", "--x", "x1,x2", "--boot", "100"]) == EXIT_NUMERICAL
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_dumps_uses_17_digits():
    text = dumps({"a": 0.1, "b": [1.0, float("nan")], "c": True, "d": None, "e": np.int64(3)})
    doc = json.loads(text)
    assert '"a": 0.10000000000000001' in text
    assert doc == {"a": 0.1, "b": [1.0, None], "c": True, "d": None, "e": 3}


def test_parse_tau_grid():
    np.testing.assert_allclose(parse_tau_grid("-1:1:3"), [-1.0, 0.0, 1.0])
    assert parse_tau_grid(None) is None

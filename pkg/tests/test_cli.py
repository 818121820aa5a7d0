import csv
import json
import warnings

import numpy as np
import pytest

from facecov.cli import main, read_fit_artifact, _resolve_threads, FIT_FORMAT
from facecov.sim import METRIC_COLUMNS, gen_case1
from facecov.spectral import eigendecompose, eval_cov_grid


def _run(*argv):
    # the pipeline commands may emit boundary/clamp warnings on tiny inputs;
    # exit codes and files are what is under test here
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return main(list(argv))


def _write_obs_csv(path, ds, lo=5.0, span=10.0):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "time", "value"])
        for s in ds.subjects:
            for t, v in zip(s.times, s.values):
                writer.writerow([s.id, repr(lo + span * float(t)), repr(float(v))])


def _write_times_csv(path, times):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time"])
        for t in times:
            writer.writerow([repr(float(t))])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One fitted artifact shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("cli")
    ds, _ = gen_case1(30, (3, 4, 5), snr=2.0, rng=np.random.default_rng(123))
    data = root / "obs.csv"
    _write_obs_csv(data, ds)
    fit = root / "fit.json"
    rc = _run("fit", "--input", str(data), "--output", str(fit),
              "--knots", "4", "--n-lambda", "30", "--grid", "41")
    assert rc == 0
    return {"root": root, "data": data, "fit": fit}


def test_fit_artifact_contents(pipeline):
    obj = json.loads(pipeline["fit"].read_text())
    assert obj["format"] == FIT_FORMAT
    c = len(obj["basis"]["interior_knots"]) + obj["basis"]["order"]
    assert c == 8
    assert len(obj["theta_vech"]) == c * (c + 1) // 2
    assert obj["cov_grid"]["grid_size"] == 41
    assert len(obj["cov_grid"]["values"]) == 41
    lo, hi = obj["time_domain"]
    assert lo >= 5.0 and hi <= 15.0 and hi > lo
    assert obj["diagnostics"]["n_subjects"] == 30
    assert obj["diagnostics"]["selection"] == "igcv"
    assert isinstance(obj["diagnostics"]["sigma2_clamped"], bool)
    assert len(obj["lambdas"]) == 2

    fit, (alo, ahi) = read_fit_artifact(pipeline["fit"])
    np.testing.assert_allclose(fit.theta_vech, obj["theta_vech"])
    assert fit.sigma2_hat == obj["sigma2"]
    assert (alo, ahi) == (lo, hi)


def test_fit_is_byte_reproducible(pipeline):
    again = pipeline["root"] / "fit-again.json"
    rc = _run("fit", "--input", str(pipeline["data"]), "--output", str(again),
              "--knots", "4", "--n-lambda", "30", "--grid", "41")
    assert rc == 0
    assert again.read_bytes() == pipeline["fit"].read_bytes()


def test_eigen_output_is_the_scaled_spectrum(pipeline):
    out = pipeline["root"] / "eigen.csv"
    rc = _run("eigen", "--fit", str(pipeline["fit"]), "--output", str(out),
              "--k", "2", "--grid", "31")
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["component", "eigenvalue", "time", "value"]
    body = rows[1:]
    assert len(body) == 2 * 31

    # reference: the library spectrum on the unit interval, scaled by the
    # stored domain length
    fit, (lo, hi) = read_fit_artifact(pipeline["fit"])
    span = hi - lo
    u = np.linspace(0, 1, 31)
    res = eigendecompose(eval_cov_grid(fit, u), u)
    for j in (0, 1):
        block = body[j * 31:(j + 1) * 31]
        assert all(r[0] == str(j + 1) for r in block)
        vals = {r[1] for r in block}
        assert len(vals) == 1  # eigenvalue repeated per grid row
        assert float(next(iter(vals))) == pytest.approx(res.eigenvalues[j] * span,
                                                        rel=1e-12)
        t = np.array([float(r[2]) for r in block])
        np.testing.assert_allclose(t, lo + u * span, rtol=1e-12)
        psi = np.array([float(r[3]) for r in block])
        np.testing.assert_allclose(psi, res.eigenfunctions[:, j] / np.sqrt(span),
                                   rtol=1e-10, atol=1e-12)


def test_eigen_truncates_with_warning(pipeline):
    out = pipeline["root"] / "eigen-all.csv"
    with pytest.warns(RuntimeWarning, match="truncating"):
        rc = main(["eigen", "--fit", str(pipeline["fit"]), "--output", str(out),
                   "--k", "50", "--grid", "21"])
    assert rc == 0
    with open(out, newline="") as fh:
        body = list(csv.reader(fh))[1:]
    assert len(body) % 21 == 0
    assert len(body) < 50 * 21


def test_predict_outputs_rows_per_subject_and_time(pipeline):
    times = pipeline["root"] / "new-times.csv"
    _write_times_csv(times, [6.0, 9.5, 14.0])
    out = pipeline["root"] / "pred.csv"
    rc = _run("predict", "--fit", str(pipeline["fit"]), "--data",
              str(pipeline["data"]), "--new-times", str(times),
              "--output", str(out))
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["subject_id", "time", "x_hat", "lo", "hi"]
    assert len(rows) - 1 == 30 * 3
    xs = np.array([float(r[2]) for r in rows[1:]])
    los = np.array([float(r[3]) for r in rows[1:]])
    his = np.array([float(r[4]) for r in rows[1:]])
    assert np.all(los <= xs) and np.all(xs <= his)

    only = pipeline["root"] / "pred-two.csv"
    rc = _run("predict", "--fit", str(pipeline["fit"]), "--data",
              str(pipeline["data"]), "--new-times", str(times),
              "--output", str(only), "--subject", "s01", "--subject", "s03")
    assert rc == 0
    with open(only, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == 2 * 3
    assert {r[0] for r in rows[1:]} == {"s01", "s03"}


def test_predict_latent_bands_are_narrower(pipeline):
    times = pipeline["root"] / "one-time.csv"
    _write_times_csv(times, [9.0])
    wide = pipeline["root"] / "pred-obs.csv"
    narrow = pipeline["root"] / "pred-lat.csv"
    for path, extra in ((wide, ()), (narrow, ("--latent",))):
        rc = _run("predict", "--fit", str(pipeline["fit"]), "--data",
                  str(pipeline["data"]), "--new-times", str(times),
                  "--output", str(path), "--subject", "s01", *extra)
        assert rc == 0

    def width(path):
        with open(path, newline="") as fh:
            row = list(csv.reader(fh))[1]
        return float(row[4]) - float(row[3])

    assert width(narrow) < width(wide)


def test_predict_error_paths(pipeline, tmp_path, capsys):
    times_out = tmp_path / "bad-times.csv"
    _write_times_csv(times_out, [99.0])
    rc = _run("predict", "--fit", str(pipeline["fit"]), "--data",
              str(pipeline["data"]), "--new-times", str(times_out),
              "--output", str(tmp_path / "x.csv"))
    assert rc == 1
    assert "outside the fitted domain" in capsys.readouterr().err

    times = tmp_path / "ok-times.csv"
    _write_times_csv(times, [9.0])
    rc = _run("predict", "--fit", str(pipeline["fit"]), "--data",
              str(pipeline["data"]), "--new-times", str(times),
              "--output", str(tmp_path / "x.csv"), "--subject", "zz")
    assert rc == 1
    assert "'zz'" in capsys.readouterr().err

    bad_hdr = tmp_path / "bad-header.csv"
    bad_hdr.write_text("t\n0.5\n")
    rc = _run("predict", "--fit", str(pipeline["fit"]), "--data",
              str(pipeline["data"]), "--new-times", str(bad_hdr),
              "--output", str(tmp_path / "x.csv"))
    assert rc == 1
    assert "expected header time" in capsys.readouterr().err


def test_corrupt_artifacts_are_rejected(pipeline, tmp_path, capsys):
    wrong = tmp_path / "wrong.json"
    wrong.write_text('{"format": "other/1"}\n')
    out = tmp_path / "e.csv"
    assert _run("eigen", "--fit", str(wrong), "--output", str(out)) == 1
    assert FIT_FORMAT in capsys.readouterr().err

    invalid = tmp_path / "invalid.json"
    invalid.write_text("{nope\n")
    assert _run("eigen", "--fit", str(invalid), "--output", str(out)) == 1
    assert "not valid JSON" in capsys.readouterr().err

    obj = json.loads(pipeline["fit"].read_text())
    del obj["sigma2"]
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps(obj))
    assert _run("eigen", "--fit", str(missing), "--output", str(out)) == 1
    assert "missing key" in capsys.readouterr().err

    obj = json.loads(pipeline["fit"].read_text())
    obj["theta_vech"] = obj["theta_vech"][:-1]
    short = tmp_path / "short.json"
    short.write_text(json.dumps(obj))
    assert _run("eigen", "--fit", str(short), "--output", str(out)) == 1
    assert "expected" in capsys.readouterr().err


def test_fit_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,time,value\na,0.1,1.0\n")
    rc = _run("fit", "--input", str(bad), "--output", str(tmp_path / "f.json"))
    assert rc == 1
    assert "expected header" in capsys.readouterr().err

    missing = tmp_path / "does-not-exist.csv"
    rc = _run("fit", "--input", str(missing), "--output", str(tmp_path / "f.json"))
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    cases = [
        [],
        ["frobnicate"],
        ["fit", "--input", "x.csv", "--output", "y.json", "--knots", "0"],
        ["fit", "--input", "x.csv", "--output", "y.json", "--order", "1"],
        ["fit", "--input", "x.csv", "--output", "y.json",
         "--lambda-min", "10", "--lambda-max", "1"],
        ["predict", "--fit", "f", "--data", "d", "--new-times", "t",
         "--output", "o", "--level", "1.5"],
        ["simulate", "--m-set", "abc", "--output-metrics", "m",
         "--output-summary", "s"],
        ["simulate", "--m-set", "0,3", "--output-metrics", "m",
         "--output-summary", "s"],
        ["simulate", "--case", "3", "--output-metrics", "m",
         "--output-summary", "s"],
    ]
    for argv in cases:
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2, argv


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "facecov" in capsys.readouterr().out


def test_simulate_writes_reproducible_metrics(tmp_path):
    args = ["simulate", "--case", "1", "--n", "20", "--reps", "2",
            "--knots", "3", "--grid", "31", "--m-set", "3,4", "--seed", "7"]
    m1, s1 = tmp_path / "m1.csv", tmp_path / "s1.json"
    m2, s2 = tmp_path / "m2.csv", tmp_path / "s2.json"
    assert _run(*args, "--threads", "2", "--output-metrics", str(m1),
                "--output-summary", str(s1)) == 0
    assert _run(*args, "--threads", "1", "--output-metrics", str(m2),
                "--output-summary", str(s2)) == 0
    # metrics are seed-determined; thread count must not leak into them
    assert m1.read_bytes() == m2.read_bytes()

    with open(m1, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == METRIC_COLUMNS
    assert len(rows) == 3
    assert [r[0] for r in rows[1:]] == ["0", "1"]

    summary = json.loads(s1.read_text())
    assert summary["replications"] == 2
    assert summary["n_fail"] == 0
    assert set(summary["median"]) == set(METRIC_COLUMNS) - {"replication"}
    other = json.loads(s2.read_text())
    del summary["runtime_seconds"], other["runtime_seconds"]
    assert summary == other


def test_validate_prints_pass_lines(capsys):
    rc = main(["validate", "--instances", "2", "--seed", "1"])
    assert rc == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("validate ")]
    assert len(lines) == 4
    assert all(": PASS" in l for l in lines)


def test_resolve_threads(monkeypatch):
    assert _resolve_threads(5) == 5
    monkeypatch.setenv("FACE_THREADS", "3")
    assert _resolve_threads(None) == 3
    assert _resolve_threads(2) == 2  # explicit argument wins
    monkeypatch.setenv("FACE_THREADS", "zero")
    with pytest.raises(ValueError, match="not an integer"):
        _resolve_threads(None)
    monkeypatch.setenv("FACE_THREADS", "0")
    with pytest.raises(ValueError, match="positive"):
        _resolve_threads(None)
    monkeypatch.delenv("FACE_THREADS")
    assert _resolve_threads(None) >= 1

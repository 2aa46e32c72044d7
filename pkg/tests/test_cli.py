import json

import numpy as np
import pytest

from relspec.cli import main, parse_band, read_curves

GOLDEN_Q95 = 9.8915  # tests/oracles/pivot_golden.py


@pytest.fixture
def cache(tmp_path):
    return str(tmp_path / "cache")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def bb_csv(tmp_path, capsys):
    path = tmp_path / "bb.csv"
    assert run(capsys, "generate", "--scenario", "bb-shift", "--T", 512, "--which", "x",
               "--out", path)[0] == 0
    return path


def orthogonal(rng, g):
    q, _ = np.linalg.qr(rng.standard_normal((g, g)))
    return q


def separable_subject(path, T, seed, bases, permute=False):
    """Separable field with directional eigenvalues (4, 2, 1, 0.5) in every direction."""
    rng = np.random.default_rng(seed)
    lam = np.array([4.0, 2.0, 1.0, 0.5])
    B1 = bases[0][:, [1, 0, 2, 3]] if permute else bases[0]
    xi = rng.standard_normal((T, 4, 4, 4)) * np.sqrt(np.einsum("i,j,k->ijk", lam, lam, lam))
    vol = np.einsum("tjkl,aj,bk,cl->tabc", xi, B1, bases[1], bases[2])
    np.savetxt(path, vol.reshape(T, -1), delimiter=",")
    path.with_suffix(".json").write_text(json.dumps({"shape": [4, 4, 4]}))
    return path


def test_read_curves_grid_and_header(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("# grid: 0,0.5,1\na,b,c\n1,2,3\n4,5,6\n")
    data, grid = read_curves(p)
    assert data.shape == (2, 3) and grid.tolist() == [0, 0.5, 1]


def test_parse_band():
    assert parse_band("0:pi/2") == (0.0, np.pi / 2)
    assert parse_band("0.1:pi") == (0.1, np.pi)
    assert parse_band("0:1.5708") == (0.0, 1.5708)


def test_estimate_leading_eigenvalue(bb_csv, tmp_path, capsys, cache):
    out = tmp_path / "est"
    code, text, _ = run(capsys, "estimate", "--input", bb_csv, "--out", out, "--cache-dir", cache)
    assert code == 0
    first = (out / "eigenvalues.csv").read_text().splitlines()[1].split(",")
    assert float(first[1]) == pytest.approx(1 / np.pi ** 2, rel=0.15)
    spectrum = (out / "spectrum.csv").read_text().splitlines()
    assert spectrum[0].startswith("freq,hs_norm_sq,lambda_1") and len(spectrum) == 65


def test_estimate_twice_identical(bb_csv, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        assert run(capsys, "estimate", "--input", bb_csv, "--out", tmp_path / name, "--dump-operators")[0] == 0
        outs.append({f.name: f.read_bytes() for f in (tmp_path / name).iterdir()})
    assert outs[0] == outs[1]


def test_empty_input(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("")
    code, _, err = run(capsys, "estimate", "--input", p)
    assert code == 1 and "no rows" in err


def test_missing_input(tmp_path, capsys):
    code, _, err = run(capsys, "estimate", "--input", tmp_path / "nope.csv")
    assert code == 1 and "cannot read" in err


def test_basis_larger_than_grid(tmp_path, capsys):
    p = tmp_path / "small.csv"
    np.savetxt(p, np.random.default_rng(0).standard_normal((50, 5)), delimiter=",")
    code, _, err = run(capsys, "estimate", "--input", p, "--basis-dim", 9)
    assert code == 2 and "basis_dim" in err


@pytest.mark.parametrize("flags,field", [(["--alpha", "1.5"], "alpha"), (["--nu-n", "2"], "nu_n"),
                                         (["--pivot-steps", "1001"], "pivot_steps"),
                                         (["--delta", "-1"], "delta")])
def test_config_errors(bb_csv, capsys, flags, field):
    code, _, err = run(capsys, "test", "--input-x", bb_csv, "--input-y", bb_csv, *flags)
    assert code == 2 and f"field '{field}'" in err


def test_identical_inputs_degenerate(bb_csv, tmp_path, capsys, cache):
    code, out, _ = run(capsys, "test", "--input-x", bb_csv, "--input-y", bb_csv, "--delta", 0.1,
                       "--cache-dir", cache, "--out", tmp_path / "t")
    assert code == 0 and "accept (degenerate)" in out
    doc = json.loads((tmp_path / "t" / "test_result.json").read_text())
    assert doc["result"]["p_value"] == 1 and doc["result"]["degenerate"]
    assert doc["result"]["statistic"] == "-inf"


def test_dependent_length_mismatch(bb_csv, tmp_path, capsys, cache):
    short = tmp_path / "short.csv"
    run(capsys, "generate", "--scenario", "bb-shift", "--T", 300, "--out", short)
    code, _, err = run(capsys, "test", "--input-x", bb_csv, "--input-y", short, "--dependent",
                       "--cache-dir", cache)
    assert code == 2 and "ratio-rate" in err


def test_power_regime_projector(tmp_path, capsys, cache):
    x, y = tmp_path / "x.csv", tmp_path / "y.csv"
    for which, path in (("x", x), ("y", y)):
        run(capsys, "generate", "--scenario", "ar-shift", "--param", 0.25, "--T", 256,
            "--which", which, "--seed", 3, "--out", path)
    code, out, _ = run(capsys, "test", "--input-x", x, "--input-y", y, "--hypothesis", "projector",
                       "--k", 1, "--delta", 0.89, "--basis-dim", 4, "--cache-dir", cache, "--json")
    assert code == 0
    # AR curves have no constant component; the constant direction carries no signal
    assert json.loads(out)["result"]["decision"] == "reject"


def test_config_round_trip(tmp_path, capsys, cache):
    x, y = tmp_path / "x.csv", tmp_path / "y.csv"
    for which, path in (("x", x), ("y", y)):
        run(capsys, "generate", "--scenario", "ar-dependence", "--param", 0.4, "--T", 128,
            "--which", which, "--out", path)
    first = tmp_path / "r1"
    run(capsys, "test", "--input-x", x, "--input-y", y, "--band", "0:pi/2", "--delta", 0.2,
        "--window", "parzen", "--basis-dim", 5, "--cache-dir", cache, "--out", first)
    doc = json.loads((first / "test_result.json").read_text())
    assert doc["config"]["band"][1] == pytest.approx(np.pi / 2)
    second = tmp_path / "r2"
    code, _, _ = run(capsys, "test", "--config", first / "test_result.json", "--input-x", x,
                     "--input-y", y, "--out", second)
    assert code == 0
    assert (first / "test_result.json").read_bytes() == (second / "test_result.json").read_bytes()


def test_pivot_cache_and_quantiles(tmp_path, capsys, cache):
    code, out, _ = run(capsys, "pivot", "--alphas", "0.05,0.5", "--cache-dir", cache, "--out", tmp_path)
    assert code == 0 and "simulated" in out
    code, out2, _ = run(capsys, "pivot", "--alphas", "0.05,0.5", "--cache-dir", cache)
    assert "cache hit" in out2
    q = {r["alpha"]: r["quantile"] for r in json.loads((tmp_path / "pivot.json").read_text())["quantiles"]}
    assert abs(q[0.5]) < 0.05
    assert q[0.05] == pytest.approx(GOLDEN_Q95, rel=0.02)


def test_experiment_one_point_and_resume(tmp_path, capsys, cache):
    out = tmp_path / "exp"
    args = ["experiment", "--scenario", "ar-dependence", "--params", "0.28", "--T", "128",
            "--reps", 50, "--delta-at", 0.28, "--cache-dir", cache, "--out", out]
    assert run(capsys, *args)[0] == 0
    rows = (out / "experiment.csv").read_text().splitlines()
    assert len(rows) == 2
    rec = dict(zip(rows[0].split(","), rows[1].split(",")))
    p = float(rec["rate"])
    assert float(rec["se"]) == pytest.approx(np.sqrt(p * (1 - p) / 50), rel=1e-9)
    before = {f: (out / f).read_bytes() for f in ("experiment.csv", "experiment.json")}
    # a changed grid invalidates the progress file and starts over
    args2 = ["experiment", "--scenario", "ar-dependence", "--params", "0.28,0.4", "--T", "128",
             "--reps", 50, "--delta-at", 0.28, "--cache-dir", cache, "--out", out]
    assert run(capsys, *args2)[0] == 0
    progress = out / "experiment.progress.jsonl"
    lines = progress.read_text().splitlines()
    assert len(lines) == 3  # fingerprint header plus two points
    complete = {f: (out / f).read_bytes() for f in ("experiment.csv", "experiment.json")}
    assert before["experiment.csv"] != complete["experiment.csv"]
    # interrupt after the first point (with a torn second line), then resume
    progress.write_text("\n".join(lines[:2]) + "\n" + lines[2][:20])
    (out / "experiment.csv").unlink()
    assert run(capsys, *args2)[0] == 0
    assert complete == {f: (out / f).read_bytes() for f in ("experiment.csv", "experiment.json")}


def test_experiment_all_points_fail(tmp_path, capsys, cache):
    code, _, _ = run(capsys, "experiment", "--scenario", "ar-shift", "--params", "0.1",
                     "--T", "16", "--reps", 50, "--cache-dir", cache, "--out", tmp_path,
                     "--nu-n", 20)
    assert code == 3


def test_separable_pipeline(tmp_path, capsys, cache):
    rng = np.random.default_rng(0)
    bases = [orthogonal(rng, 4) for _ in range(3)]
    files = [separable_subject(tmp_path / "s0.csv", 512, 1, bases),
             separable_subject(tmp_path / "s1.csv", 512, 2, bases),
             separable_subject(tmp_path / "s2.csv", 512, 3, bases, permute=True)]
    out = tmp_path / "sep"
    argv = ["separable", "--deltas", "30,0.5,5", "--cache-dir", cache, "--out", out]
    for f in files:
        argv += ["--input", f]
    assert run(capsys, *argv)[0] == 0
    doc = json.loads((out / "separable.json").read_text())
    p = doc["p_values"]
    for kind in p:
        mat = p[kind]
        assert all(mat[i][j] is None for i in range(3) for j in range(i + 1))
    # direction-1 eigenbasis permuted in s2: operator and projector respond, eigenvalues do not
    assert p["operator"][0][1] > 0.05 and p["operator"][0][2] < 0.05 and p["operator"][1][2] < 0.05
    assert p["eigenprojector"][0][1] > 0.05 and p["eigenprojector"][0][2] < 0.05
    assert min(p["eigenvalue"][0][1], p["eigenvalue"][0][2], p["eigenvalue"][1][2]) > 0.05
    header = (out / "pvalues_operator.csv").read_text().splitlines()[0]
    assert header == ",s0,s1,s2"
    table = (out / "kronecker_s0.csv").read_text().splitlines()
    assert len(table) == 1 + 4 ** 3  # floor(512^(1/3)) = 8 capped at 4 per direction
    assert table[1].startswith("1,1,1,1,")


def test_separable_identical_subjects(tmp_path, capsys, cache):
    rng = np.random.default_rng(1)
    bases = [orthogonal(rng, 4) for _ in range(3)]
    a = separable_subject(tmp_path / "a.csv", 64, 5, bases)
    b = tmp_path / "b.csv"
    b.write_bytes(a.read_bytes())
    b.with_suffix(".json").write_text(a.with_suffix(".json").read_text())
    code, _, _ = run(capsys, "separable", "--input", a, "--input", b, "--delta", 0.01,
                     "--cache-dir", cache, "--out", tmp_path / "o")
    assert code == 0
    doc = json.loads((tmp_path / "o" / "separable.json").read_text())
    assert all(doc["p_values"][k][0][1] == 1 for k in doc["p_values"])


def test_separable_missing_axes(tmp_path, capsys):
    p = tmp_path / "v.csv"
    np.savetxt(p, np.zeros((10, 8)), delimiter=",")
    code, _, err = run(capsys, "separable", "--input", p)
    assert code == 2 and "axis metadata missing" in err

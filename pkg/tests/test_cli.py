import csv

import numpy as np
import pytest

from superpatch import cli, curvature
from superpatch.curvature import canonical_windows, read_cost_table, squared_data_term, window_sums
from superpatch.deconv import blurred_observation
from superpatch.errors import CapacityError
from superpatch.images import blob_image, read_pbm, read_pgm, write_pgm


def gap_from(report):
    e, lb = float(report["energy"]), float(report["lower_bound"])
    return (e - lb) / max(abs(lb), 1e-12)


def test_gen_circle(tmp_path):
    assert cli.main(["gen", "circle", "--size", "81", "--radius", "30", "--out", str(tmp_path / "c.pgm")]) == 0
    img = read_pgm(tmp_path / "c.pgm")
    assert (img.width, img.height) == (81, 81)
    assert int(img.samples.sum()) == 2821


def test_gen_blob_is_deterministic(tmp_path):
    for name in ("a", "b"):
        cli.main(["gen", "blob", "--size", "24", "--seed", "7", "--out", str(tmp_path / f"{name}.pgm")])
    a = read_pgm(tmp_path / "a.pgm").samples
    assert np.array_equal(a, read_pgm(tmp_path / "b.pgm").samples)
    assert set(np.unique(a)) <= {0.0, 1.0}
    cli.main(["gen", "blob", "--size", "24", "--seed", "7", "--out", str(tmp_path / "a.pbm")])
    assert np.array_equal(read_pbm(tmp_path / "a.pbm").samples, a)


def test_segment_zero_lambda_is_threshold(tmp_path, jit_warm):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(12, 10)) / 255.0
    write_pgm(img, tmp_path / "in.pgm")
    rc = cli.main(["segment", "--input", str(tmp_path / "in.pgm"), "--lambda", "0", "--model", "2x2",
                   "--out", str(tmp_path / "s.pbm"), "--report", str(tmp_path / "r.txt"),
                   "--trace", str(tmp_path / "t.csv")])
    assert rc == 0
    x = read_pbm(tmp_path / "s.pbm").samples
    data = squared_data_term(read_pgm(tmp_path / "in.pgm").samples)
    expect = np.argmin(data, axis=-1)
    # ties (intensity exactly 0.5) cannot occur with 8-bit samples
    assert np.array_equal(x, expect)
    rep = cli.read_report(tmp_path / "r.txt")
    assert list(rep)[:len(cli.REPORT_KEYS)] == list(cli.REPORT_KEYS)
    assert float(rep["relative_gap"]) == pytest.approx(0.0, abs=1e-12)
    assert rep["consistent"] == "true" and rep["model"] == "2x2" and rep["seed"] == "0"
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "lower_bound", "energy", "ms"]
    assert len(rows) == int(rep["iterations"]) + 1


def test_zero_lambda_pruned_model_still_certifies(tmp_path, jit_warm):
    # the 3x3 model keeps its admissible-state restriction at lambda 0, so the
    # result need not be the threshold; the bound must still certify it
    rng = np.random.default_rng(1)
    write_pgm(rng.integers(0, 256, size=(9, 9)) / 255.0, tmp_path / "in.pgm")
    cli.main(["segment", "--input", str(tmp_path / "in.pgm"), "--lambda", "0", "--model", "3x3",
              "--out", str(tmp_path / "s.pbm"), "--report", str(tmp_path / "r.txt")])
    rep = cli.read_report(tmp_path / "r.txt")
    assert float(rep["relative_gap"]) <= 1e-9


def test_report_gap_is_recomputable(tmp_path, jit_warm):
    cli.main(["gen", "blob", "--size", "16", "--seed", "1", "--noise", "0.3", "--out", str(tmp_path / "b.pgm")])
    cli.main(["segment", "--input", str(tmp_path / "b.pgm"), "--lambda", "0.5",
              "--out", str(tmp_path / "s.pbm"), "--report", str(tmp_path / "r.txt")])
    rep = cli.read_report(tmp_path / "r.txt")
    assert float(rep["relative_gap"]) == pytest.approx(gap_from(rep), rel=1e-9, abs=1e-15)
    assert rep["command"].startswith("superpatch segment")


def test_lbp_report_has_no_bound(tmp_path, jit_warm):
    cli.main(["gen", "blob", "--size", "10", "--out", str(tmp_path / "b.pgm")])
    cli.main(["segment", "--input", str(tmp_path / "b.pgm"), "--algorithm", "lbp", "--max-iters", "20",
              "--out", str(tmp_path / "s.pbm"), "--report", str(tmp_path / "r.txt")])
    rep = cli.read_report(tmp_path / "r.txt")
    assert rep["lower_bound"] == "nan" and rep["relative_gap"] == "nan"


def test_costs_command_and_reload(tmp_path, capsys):
    out = tmp_path / "c3.tsv"
    assert cli.main(["costs", "--model", "3x3", "--seed", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# patch_side=3 count=122" and len(lines) == 123
    table = read_cost_table(out)
    ws = canonical_windows()
    np.testing.assert_allclose(window_sums(table, ws), [w.curvature for w in ws], atol=1e-8)
    assert "122" in capsys.readouterr().out


def test_segment_with_cost_file(tmp_path, jit_warm):
    cli.main(["costs", "--model", "3x3", "--out", str(tmp_path / "c.tsv")])
    cli.main(["gen", "circle", "--size", "16", "--radius", "5", "--out", str(tmp_path / "c.pgm")])
    args = ["segment", "--input", str(tmp_path / "c.pgm"), "--lambda", "0.3", "--model", "3x3"]
    assert cli.main(args + ["--costs", str(tmp_path / "c.tsv"), "--out", str(tmp_path / "a.pbm")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b.pbm")]) == 0
    assert np.array_equal(read_pbm(tmp_path / "a.pbm").samples, read_pbm(tmp_path / "b.pbm").samples)
    wrong = args[:-1] + ["2x2", "--costs", str(tmp_path / "c.tsv"), "--out", str(tmp_path / "x.pbm")]
    assert cli.main(wrong) == 2


def test_deconv_noiseless(tmp_path, jit_warm):
    truth = (blob_image(12, seed=4) > 0.5).astype(float)
    y = blurred_observation(truth)
    write_pgm(y, tmp_path / "y.pgm", maxval=9)   # blur values k/9 are stored exactly
    write_pgm(truth, tmp_path / "t.pgm", maxval=1)
    rc = cli.main(["deconv", "--input", str(tmp_path / "y.pgm"), "--truth", str(tmp_path / "t.pgm"),
                   "--out", str(tmp_path / "x.pbm"), "--report", str(tmp_path / "r.txt")])
    assert rc == 0
    rep = cli.read_report(tmp_path / "r.txt")
    assert float(rep["energy"]) == pytest.approx(-float(rep["constant"]), abs=1e-9)
    assert float(rep["data_cost"]) == pytest.approx(0.0, abs=1e-9)
    assert float(rep["truth_data_cost"]) == pytest.approx(0.0, abs=1e-9)
    assert rep["model"] == "mean3"


def test_exit_codes(tmp_path, monkeypatch, capsys, jit_warm):
    out = str(tmp_path / "o.pbm")
    assert cli.main(["segment", "--input", str(tmp_path / "missing.pgm"), "--out", out]) == 2
    (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\nab")
    assert cli.main(["segment", "--input", str(tmp_path / "bad.pgm"), "--out", out]) == 2
    assert "byte" in capsys.readouterr().err

    # a 2x2 table admitting only "top-left pixel set" cannot tile any image
    (tmp_path / "one.tsv").write_text("# patch_side=2 count=1\n1\t0\n")
    cli.main(["gen", "circle", "--size", "8", "--radius", "3", "--out", str(tmp_path / "c.pgm")])
    rc = cli.main(["segment", "--input", str(tmp_path / "c.pgm"), "--model", "2x2",
                   "--costs", str(tmp_path / "one.tsv"), "--out", out])
    assert rc == 3

    def too_big(*a, **k):
        raise CapacityError("too many states")
    monkeypatch.setattr(curvature, "model_table", too_big)
    assert cli.main(["costs", "--model", "5x5", "--out", str(tmp_path / "c.tsv")]) == 4

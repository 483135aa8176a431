import csv

import numpy as np
import pytest

from dpc.cli import main
from dpc.io import load_checkpoint, parse_record, read_records, save_image
from dpc.datagen import read_manifest
from dpc.metrics import wrap_angle

SMALL = ["--side", "64", "--t-max", "8", "--object-radius", "12"]


def _gen(tmp_path, name="data", n=3, seed=0, extra=()):
    out = tmp_path / name
    assert main(["gen", "--n", str(n), "--seed", str(seed), "--out", str(out), *SMALL, *extra]) == 0
    return out / "manifest.csv"


def test_gen_is_deterministic(tmp_path):
    a, b = _gen(tmp_path, "a"), _gen(tmp_path, "b")
    assert a.read_text() == b.read_text()
    assert (a.parent / "00001_tgt.pgm").read_bytes() == (b.parent / "00001_tgt.pgm").read_bytes()
    assert [r["seed"] for r in read_manifest(a)] == ["0", "1", "2"]
    c = _gen(tmp_path, "c", seed=5)
    assert a.read_text() != c.read_text()


def test_register_same_file_is_identity(tmp_path, capsys):
    yy, xx = np.mgrid[:32, :32]
    img = np.exp(-((xx - 13) ** 2 + (yy - 17) ** 2) / 20.0) + 0.5 * (np.abs(xx - 20) < 3) * (np.abs(yy - 9) < 5)
    save_image(tmp_path / "a.pgm", img)
    assert main(["register", "2d", str(tmp_path / "a.pgm"), str(tmp_path / "a.pgm")]) == 0
    tx, ty, theta, mu = (float(v) for v in capsys.readouterr().out.split())
    assert abs(tx) < 0.05 and abs(ty) < 0.05
    assert abs(wrap_angle(theta)) < 1e-3 and abs(mu - 1) < 1e-3


def test_register_manifest_within_thresholds(tmp_path):
    m = _gen(tmp_path)
    res = tmp_path / "r.txt"
    assert main(["register", "2d", "--manifest", str(m), "--out", str(res)]) == 0
    est = read_records(res)
    truth = [r["pose"] for r in read_manifest(m)]
    assert len(est) == len(truth) == 3
    for e, t in zip(est, truth):
        assert np.abs(np.subtract(e.t, t.t)).max() <= 1.0
        assert abs(e.mu - t.mu) <= 0.05


def test_jobs_do_not_change_output(tmp_path):
    m = _gen(tmp_path)
    one, two = tmp_path / "1.txt", tmp_path / "2.txt"
    assert main(["register", "2d", "--manifest", str(m), "--out", str(one), "--jobs", "1"]) == 0
    assert main(["register", "2d", "--manifest", str(m), "--out", str(two), "--jobs", "2"]) == 0
    assert one.read_text() == two.read_text()


def test_eval_prints_metrics_and_per_pair(tmp_path, capsys):
    m = _gen(tmp_path)
    res = tmp_path / "r.txt"
    main(["register", "2d", "--manifest", str(m), "--out", str(res)])
    capsys.readouterr()
    per = tmp_path / "per.csv"
    assert main(["eval", str(m), str(res), "--tau-x", "1", "--sweep", "3", "--per-pair", str(per)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "Acc_x1: 100.00%"
    assert "sweep tau 0 1 2" in out
    assert any(ln.startswith("MSE_mu: ") for ln in out)
    rows = list(csv.reader(per.open()))
    assert rows[0][0] == "pair_id" and len(rows) == 4


def test_eval_of_truth_is_perfect(tmp_path, capsys):
    m = _gen(tmp_path)
    res = tmp_path / "truth.txt"
    res.write_text("".join(f"{r['tx']} {r['ty']} {r['theta']} {r['mu']}\n" for r in read_manifest(m)))
    assert main(["eval", str(m), str(res), "--sweep", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("100.00%") == 4 and "MSE_x: 0\n" in out


def test_missing_file_exits_2_and_names_it(tmp_path, capsys):
    ghost = tmp_path / "ghost.pgm"
    assert main(["register", "2d", str(ghost), str(ghost)]) == 2
    assert "ghost.pgm" in capsys.readouterr().err
    assert main(["eval", str(tmp_path / "m.csv"), str(tmp_path / "r.txt")]) == 2


def test_malformed_manifest_exits_2(tmp_path, capsys):
    m = _gen(tmp_path, n=1)
    m.write_text(m.read_text().replace("00000_src.pgm,00000_tgt.pgm,", "00000_src.pgm,00000_tgt.pgm,abc"))
    res = tmp_path / "r.txt"
    res.write_text("0 0 0 1\n")
    assert main(["eval", str(m), str(res)]) == 2
    assert "row 1" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["register"], ["register", "4d", "a", "b"], ["register", "2d", "a"],
                                  ["gen", "--n", "1"], ["register", "2d", "a", "b", "--jobs", "0"],
                                  ["train", "m.csv", "--out", "w", "--lr", "-1"]])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as ei:
        code = main(argv)
        raise SystemExit(code)
    assert ei.value.code == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--B", "4", "--probes", "8"]) == 0
    assert "max_rel_err" in capsys.readouterr().out


def test_train_zero_lr_flat_curve(tmp_path, capsys):
    m = _gen(tmp_path, n=1)
    w, curve = tmp_path / "w.dpcw", tmp_path / "curve.csv"
    assert main(["train", str(m), "--out", str(w), "--curve", str(curve), "--steps", "3", "--lr", "0"]) == 0
    rows = list(csv.reader(curve.open()))
    losses = [float(r[1]) for r in rows[1:]]
    assert len(losses) == 3 and max(losses) == min(losses)
    assert load_checkpoint(w).ndim == 2


def test_train_then_register_with_checkpoint(tmp_path):
    m = _gen(tmp_path, n=2, extra=["--blur", "1"])
    w = tmp_path / "w.dpcw"
    assert main(["train", str(m), "--out", str(w), "--steps", "2", "--lr", "1e-3", "--layers", "2",
                 "--kernel", "3"]) == 0
    res = tmp_path / "r.txt"
    assert main(["register", "2d", "--manifest", str(m), "--checkpoint", str(w), "--out", str(res)]) == 0
    assert len(read_records(res)) == 2


def test_corrupt_checkpoint_exits_2(tmp_path, capsys):
    m = _gen(tmp_path, n=1)
    w = tmp_path / "bad.dpcw"
    w.write_bytes(b"DPCW\0\0")
    assert main(["register", "2d", "--manifest", str(m), "--checkpoint", str(w)]) == 2
    assert "bad.dpcw" in capsys.readouterr().err


def test_dump_dir_contents(tmp_path):
    m = _gen(tmp_path, n=1)
    d = tmp_path / "dump"
    assert main(["register", "2d", "--manifest", str(m), "--dump-dir", str(d), "--out", str(tmp_path / "r")]) == 0
    names = {p.name for p in (d / "00000").iterdir()}
    assert {"compensated.pgm", "overlay.pgm"} <= names
    assert any(n.endswith("_corr.pgm") for n in names)


def test_register_3d_clouds(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["gen", "--dims", "3", "--n", "1", "--seed", "100", "--out", str(out)]) == 0
    capsys.readouterr()
    m = out / "manifest.csv"
    assert main(["register", "3d", "--manifest", str(m)]) == 0
    fields = capsys.readouterr().out.split()
    assert len(fields) == 10
    est = parse_record(" ".join(fields))
    truth = read_manifest(m)[0]["pose"]
    assert est.unit == "m"
    assert np.linalg.norm(np.subtract(est.t, truth.t)) <= 0.15
    assert abs(est.mu - truth.mu) <= 0.05

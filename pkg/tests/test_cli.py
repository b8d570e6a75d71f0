import csv
import io
import json

import pytest

from gff4d.cli import JSON_KEYS, main


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    meta = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("".join(lines[len(meta):]))))
    return meta, rows


def run_dir(root):
    (d,) = [p for p in root.iterdir() if p.is_dir()]
    return d


def test_cov_check_default(tmp_path, capsys):
    assert main(["cov-check", "--out", str(tmp_path)]) == 0
    d = run_dir(tmp_path)
    assert d.name.startswith("cov-check-")
    meta, rows = read_csv(d / "result.csv")
    assert any("config_hash" in m for m in meta) and any("version" in m for m in meta)
    assert rows[0][:2] == ["regime", "pair"]
    for col in ("closed_form", "oracle", "abs_err"):
        assert col in rows[0]
    err = rows[0].index("abs_err")
    assert all(float(r[err]) < 1e-6 for r in rows[1:])
    doc = json.loads((d / "result.json").read_text(encoding="utf-8"))
    assert tuple(doc) == JSON_KEYS
    assert doc["config_hash"] in d.name or d.name.endswith(doc["config_hash"][:12])


def test_byte_identical_reruns(tmp_path):
    args = ["mgf-check", "--set", "mc_replicas = 2000", "--set", "mgf_lambdas = 0.1, 0.01",
            "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = run_dir(tmp_path / "a"), run_dir(tmp_path / "b")
    for name in ("result.csv", "result.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_single_replica_is_a_statistics_error(tmp_path, capsys):
    code = main(["kpz-exact", "--set", "mc_replicas=1", "--out", str(tmp_path)])
    assert code == 19
    assert "StatisticsError" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["cov-check", "--set", "gama=1", "--out", str(tmp_path)]) == 2
    assert "did you mean 'gamma'" in capsys.readouterr().err
    assert main(["cov-check", "--set", "gamma=3*pi", "--out", str(tmp_path)]) == 2


def test_irrelevant_key_only_warns(tmp_path, caplog):
    assert main(["cov-check", "--set", "dt=0.002", "--out", str(tmp_path)]) == 0
    assert any("dt" in r.getMessage() for r in caplog.records)


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("cov_pairs = 3\nseed = 2\n")
    assert main(["cov-check", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    _, rows = read_csv(run_dir(tmp_path / "o") / "result.csv")
    assert len(rows) - 1 == 3 * 3


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2

import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from matcache.cli import main

from .conftest import FIXTURES

SCHEMA = json.loads((Path(__file__).parent.parent / "docs" / "report.schema.json").read_text())
SPEC = "zipf:n=1000,alpha=1.0,req=200000"
SMALL = "zipf:n=500,alpha=1.0,req=20000"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def report(capsys, *argv):
    code, out, _ = run_cli(capsys, "run", *argv)
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, SCHEMA)
    return doc


def test_lru_golden(capsys):
    _, out, _ = run_cli(capsys, "run", "--synthetic", SPEC, "--capacity", "100000", "--engine", "heuristic",
                        "--algo", "lru", "--format", "json")
    assert out == (FIXTURES / "golden_lru.json").read_text()
    assert 0 < json.loads(out)["byte_miss_ratio"] < 1


def test_mat_tracks_prediction_target(capsys):
    doc = report(capsys, "--synthetic", SPEC, "--capacity", "100000", "--engine", "mat", "--k", "2",
                 "--train-batch", "8192", "--warmup", "50%")
    assert doc["fallback_evictions"] == 0
    assert doc["predictions_per_eviction"] == pytest.approx(2, abs=0.5)


def test_belady_beats_every_online_engine(capsys):
    base = ["--synthetic", SMALL, "--capacity", "10%"]
    best = report(capsys, *base, "--engine", "belady")["byte_miss_ratio"]
    for extra in (["--engine", "heuristic", "--algo", a] for a in ("lru", "fifo", "lfuda", "lruk", "2q")):
        assert best <= report(capsys, *base, *extra)["byte_miss_ratio"]
    for extra in (["--engine", "mat", "--train-batch", "2048"], ["--engine", "sampled", "--train-batch", "2048"]):
        assert best <= report(capsys, *base, *extra)["byte_miss_ratio"]


def test_csv_format(capsys):
    code, out, _ = run_cli(capsys, "run", "--synthetic", SMALL, "--capacity", "10%", "--format", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) == 2 and rows[0][0] == "byte_miss_ratio"


def test_trace_file_and_outputs(capsys, tmp_path):
    out, elog, model = tmp_path / "r.json", tmp_path / "ev.csv", tmp_path / "m.json"
    code, stdout, _ = run_cli(capsys, "run", "--trace", str(FIXTURES / "small.trace"), "--capacity", "1000",
                              "--engine", "mat", "--train-batch", "32", "--gbdt-trees", "4", "--gbdt-min-leaf", "2",
                              "--output", str(out), "--eviction-log", str(elog), "--model-out", str(model))
    assert code == 0 and stdout == ""
    jsonschema.validate(json.loads(out.read_text()), SCHEMA)
    assert elog.read_text().startswith("evict_time,key,tta\n")
    assert json.loads(model.read_text())["format"] == "matcache-gbdt"


def test_compare_rows(capsys):
    code, out, _ = run_cli(capsys, "compare", "--synthetic", SMALL, "--capacities", "2%,5%,10%",
                           "--engines", "lru,mat", "--train-batch", "2048")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 6
    assert {(r["engine"], r["algo"]) for r in rows} == {("heuristic", "lru"), ("mat", "lru")}
    assert all(r["error"] == "" for r in rows)


def test_compare_duplicates_agree_and_parallel_matches(capsys):
    argv = ["compare", "--synthetic", SMALL, "--capacities", "5%", "--engines", "lfuda,lfuda,sampled",
            "--train-batch", "2048"]
    _, serial, _ = run_cli(capsys, *argv)
    _, parallel, _ = run_cli(capsys, *argv, "--jobs", "2")
    rows = list(csv.reader(io.StringIO(serial)))
    assert rows[1] == rows[2]
    assert serial == parallel


def test_analyze(capsys, tmp_path):
    hist = tmp_path / "h.csv"
    code, out, _ = run_cli(capsys, "analyze", "--synthetic", SMALL, "--capacity", "10%",
                           "--engines", "lru,fifo", "--histogram", str(hist))
    doc = json.loads(out)
    assert code == 0
    assert doc["engines"]["belady"]["frac_below"] == 0 and doc["engines"]["belady"]["frac_above"] == 1
    assert set(doc["engines"]) == {"belady", "heuristic-lru", "heuristic-fifo"}
    assert hist.read_text().startswith("engine,bucket,count\n")


def test_analyze_without_evictions(capsys):
    code, _, err = run_cli(capsys, "analyze", "--synthetic", "zipf:n=5,alpha=1,req=50", "--capacity", "100%")
    assert code == 1 and "inapplicable" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--synthetic", SMALL, "--capacity", "10%", "--engine", "heuristic", "--k", "3"],
        ["run", "--synthetic", SMALL, "--capacity", "10%", "--engine", "belady", "--sample-n", "8"],
        ["run", "--synthetic", SMALL, "--capacity", "10%", "--engine", "sampled", "--stall-prob", "0.5"],
        ["run", "--synthetic", SMALL, "--capacity", "10%", "--engine", "belady", "--algo-param", "k=3"],
        ["run", "--synthetic", SMALL, "--trace", "x", "--capacity", "1"],
        ["run", "--synthetic", SMALL],
        ["run", "--synthetic", SMALL, "--capacity", "10%", "--engine", "mat", "--k", "0"],
        ["run", "--synthetic", "zipf:n=0", "--capacity", "10%"],
        ["run", "--synthetic", SMALL, "--capacity", "10%", "--algo", "lruk", "--algo-param", "bogus"],
        ["compare", "--synthetic", SMALL, "--capacities", "5%", "--engines", "lru,arc"],
        ["compare", "--synthetic", SMALL, "--capacities", "5%", "--engines", "mat", "--dump-training", "x"],
    ],
)
def test_inconsistent_flags_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_unreadable_trace(capsys, tmp_path):
    code, out, err = run_cli(capsys, "run", "--trace", str(tmp_path / "missing"), "--capacity", "10")
    assert code == 1 and out == "" and "cannot load trace" in err


def test_process_level_contract(tmp_path):
    env = {**os.environ, "MAT_LOG": "debug"}
    ok = subprocess.run([sys.executable, "-m", "matcache", "run", "--synthetic", "zipf:n=300,alpha=1,req=8000",
                         "--capacity", "10%", "--engine", "mat", "--train-batch", "512", "--gbdt-trees", "2"],
                        capture_output=True, text=True, env=env)
    assert ok.returncode == 0
    json.loads(ok.stdout)  # stdout is pure JSON
    assert "retrained" in ok.stderr
    bad = subprocess.run([sys.executable, "-m", "matcache", "run", "--synthetic", SMALL, "--capacity", "1",
                          "--engine", "heuristic", "--ghost-meta"], capture_output=True, text=True)
    assert bad.returncode == 2 and bad.stdout == ""


@pytest.mark.parametrize("engine", ["heuristic", "mat", "sampled", "belady"])
def test_reports_and_logs_are_byte_identical(engine, tmp_path, capsys):
    outs = []
    for i in range(2):
        elog = tmp_path / f"ev{i}.csv"
        extra = ["--train-batch", "1024"] if engine in ("mat", "sampled") else []
        code, out, _ = run_cli(capsys, "run", "--synthetic", SMALL, "--seed", "4", "--capacity", "5%",
                               "--engine", engine, *extra, "--eviction-log", str(elog))
        outs.append((out, elog.read_bytes()))
    assert outs[0] == outs[1]


def test_seed_flag_reaches_trace(capsys):
    a = report(capsys, "--synthetic", SMALL, "--seed", "1", "--capacity", "5%")
    b = report(capsys, "--synthetic", SMALL, "--seed", "2", "--capacity", "5%")
    assert a != b

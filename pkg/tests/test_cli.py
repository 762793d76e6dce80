import csv
import io
import json
from pathlib import Path

import pytest

from seucluster.cli import main

FIX = Path(__file__).parent / "fixtures"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert run("--out-dir", out, "--seed", 4, "bench-gen", "--n-blocks", 5, "--ff-range", 20, 20) == 0
    return out


def read_rows(path):
    return list(csv.reader(io.StringIO(Path(path).read_text())))


def test_extract_vcd_matches_fixture(tmp_path):
    rc = run("--out-dir", tmp_path, "extract", "--netlist", FIX / "shift3.netlist.json", "--activity", "vcd",
             "--vcd", FIX / "shift3.vcd", "--name-map", FIX / "shift3.namemap.json")
    assert rc == 0
    assert (tmp_path / "features.raw.csv").read_text() == (FIX / "shift3.features.raw.csv").read_text()


def test_extract_simulate_equals_vcd_path(tmp_path):
    a, b = tmp_path / "sim", tmp_path / "vcd"
    assert run("--out-dir", a, "extract", "--netlist", FIX / "shift3.netlist.json",
               "--workload", FIX / "shift3.workload.json", "--dump-vcd") == 0
    assert (a / "features.raw.csv").read_text() == (FIX / "shift3.features.raw.csv").read_text()
    assert run("--out-dir", b, "extract", "--netlist", FIX / "shift3.netlist.json", "--activity", "vcd",
               "--vcd", a / "golden.vcd", "--name-map", a / "golden.namemap.json") == 0
    for name in ("features.raw.csv", "features.std.csv"):
        assert (a / name).read_text() == (b / name).read_text()


def test_missing_netlist_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("--out-dir", tmp_path, "extract", "--netlist", missing, "--workload", "w.json") == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_netlist_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": ')
    assert run("--out-dir", tmp_path, "extract", "--netlist", bad, "--workload", FIX / "shift3.workload.json") == 2
    assert "syntax error" in capsys.readouterr().err


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as e:
        run("cluster")
    assert e.value.code == 2


def test_cluster_kmeans_dense_ids(bench):
    assert run("--out-dir", bench, "extract", "--netlist", bench / "netlist.json",
               "--workload", bench / "workload.json") == 0
    assert run("--out-dir", bench, "--seed", 2, "cluster", "--algo", "kmeans", "--k", 5, "--name", "km5") == 0
    ids = {int(r[1]) for r in read_rows(bench / "km5.csv")[1:]}
    assert ids == set(range(5))


def test_cluster_agglo_target_fraction(bench):
    n_ff = len(read_rows(bench / "blocks.csv")) - 1
    assert n_ff == 100
    assert run("--out-dir", bench, "cluster", "--algo", "agglo", "--target-frac", 0.10, "--name", "ag") == 0
    assert json.loads((bench / "ag.json").read_text())["n_clusters"] == 10


def test_cluster_same_config_twice(bench, tmp_path):
    feats = bench / "features.std.csv"
    for d in ("a", "b"):
        assert run("--out-dir", tmp_path / d, "--seed", 9, "cluster", "--features", feats,
                   "--algo", "meanshift", "--target-frac", 0.1) == 0
    for name in ("clusters.csv", "clusters.json", "run.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_inject_reports_reduction(bench, capsys):
    assert run("--out-dir", bench, "inject", "--netlist", bench / "netlist.json", "--workload",
               bench / "workload.json", "--granularity", "cluster", "--clusters", bench / "ag.csv", "--n", 20) == 0
    assert "effort reduction 10.00x" in capsys.readouterr().out
    meta = json.loads((bench / "campaign.cluster.json").read_text())
    assert meta["reduction_factor"] == 10.0
    assert meta["effort_injections"] == 200 and meta["per_ff_effort"] == 2000


def test_dead_logic_bench_all_zero(tmp_path):
    assert run("--out-dir", tmp_path, "bench-gen", "--n-blocks", 2, "--kinds", "dead_logic") == 0
    assert run("--out-dir", tmp_path, "inject", "--netlist", tmp_path / "netlist.json",
               "--workload", tmp_path / "workload.json", "--n", 10) == 0
    assert {r[3] for r in read_rows(tmp_path / "campaign.csv")[1:]} == {"0.0"}


def write_campaign(path, rates):
    lines = ["target,injections,failures,rate"]
    for name, f in rates.items():
        lines.append(f"{name},10,{f},{f / 10!r}")
    path.write_text("\n".join(lines) + "\n")


def test_evaluate_hand_curve(tmp_path):
    write_campaign(tmp_path / "campaign.csv", {"a": 5, "b": 3, "c": 2})
    assert run("--out-dir", tmp_path, "evaluate", "--random-runs", 3) == 0
    rows = [r for r in read_rows(tmp_path / "curve.csv")[1:] if r[0] == "ideal"]
    assert [float(r[2]) for r in rows] == pytest.approx([1.0, 0.5, 0.2, 0.0])


def test_evaluate_singletons_equal_ideal(tmp_path):
    write_campaign(tmp_path / "campaign.csv", {"a": 5, "b": 3, "c": 2, "d": 7})
    (tmp_path / "single.csv").write_text("ff_name,cluster_id\na,0\nb,1\nc,2\nd,3\n")
    assert run("--out-dir", tmp_path, "evaluate", "--clusters", tmp_path / "single.csv") == 0
    rows = read_rows(tmp_path / "curve.csv")[1:]
    ideal = [r[1:] for r in rows if r[0] == "ideal"]
    clustered = [r[1:] for r in rows if r[0] == "external_4"]
    assert ideal == clustered
    q = json.loads((tmp_path / "quality.json").read_text())
    assert q["max_diff"] == 0.0 and q["n_clusters"] == 4


def test_evaluate_missing_campaign(tmp_path):
    assert run("--out-dir", tmp_path, "evaluate", "--campaign", tmp_path / "none.csv") == 2


def test_full_pipeline_and_report(tmp_path, capsys):
    out = tmp_path
    steps = [
        ("bench-gen", "--n-blocks", 4, "--ff-range", 8, 12),
        ("extract", "--netlist", out / "netlist.json", "--workload", out / "workload.json"),
        ("cluster", "--algo", "agglo", "--target-frac", 0.2),
        ("inject", "--netlist", out / "netlist.json", "--workload", out / "workload.json", "--n", 30),
        ("inject", "--netlist", out / "netlist.json", "--workload", out / "workload.json", "--n", 30,
         "--granularity", "cluster", "--clusters", out / "clusters.csv"),
        ("evaluate", "--clusters", out / "clusters.csv", "--features", out / "features.std.csv",
         "--cluster-campaign", out / "campaign.cluster.csv"),
        ("report",),
    ]
    for s in steps:
        assert run("--out-dir", out, "--seed", 1, *s) == 0, s
    report = json.loads((out / "report.json").read_text())
    assert "ideal" in report["curves"]
    run_json = json.loads((out / "run.json").read_text())
    assert "threads" not in json.dumps(run_json)
    assert set(run_json["stages"]) >= {"bench-gen", "extract", "evaluate"}

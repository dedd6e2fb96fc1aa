import csv
import json
import subprocess
import sys

import pytest

from drmarket.cli import TRACE_HEADER, main


@pytest.fixture(scope="module")
def scen(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "tiny.json"
    assert main(["generate", "--seed", "7", "--users", "2", "--horizon", "12", "--out", str(path)]) == 0
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_generate_user_count_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["generate", "--seed", "42", "--users", "1000", "--out", str(a)]) == 0
    assert "4000 users" in capsys.readouterr().out
    main(["generate", "--seed", "42", "--users", "1000", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    d = json.loads(a.read_text())
    assert sum(x["n_users"] for x in d["aggregators"]) == 4000


def test_generate_zero_users(tmp_path):
    out = tmp_path / "z.json"
    assert main(["generate", "--seed", "1", "--users", "0", "--out", str(out)]) == 0
    assert main(["solve", "--scenario", str(out), "--out", str(tmp_path / "z.csv")]) == 0


def test_solve_bundle_trace(scen, tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["solve", "--scenario", str(scen), "--out", str(out)]) == 0
    summary = capsys.readouterr().out
    assert "termination=converged" in summary and "iterations=" in summary and "final_D=" in summary
    raw = out.read_bytes()
    assert b"\r" not in raw
    rows = read_csv(out)
    assert tuple(rows[0]) == TRACE_HEADER
    body = rows[1:]
    assert float(body[-1][3]) < 1e-3
    serious = [float(r[1]) for r in body if r[4] == "serious"]
    assert all(b >= a for a, b in zip(serious, serious[1:]))
    assert all(r[6] == "" and r[8] == "" for r in body)
    na = 4
    assert [int(r[7]) for r in body] == [2 * na * k for k in range(1, len(body) + 1)]


def test_cpm_needs_more_rows_than_bundle(scen, tmp_path):
    b, c = tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(["solve", "--scenario", str(scen), "--out", str(b)]) == 0
    assert main(["solve", "--scenario", str(scen), "--method", "cpm", "--out", str(c)]) == 0
    assert len(read_csv(c)) > len(read_csv(b))


def test_reference_distance_column(scen, tmp_path):
    ref = tmp_path / "ref.json"
    out = tmp_path / "d.csv"
    assert main(["solve", "--scenario", str(scen), "--out", str(tmp_path / "r.csv"), "--save-result", str(ref)]) == 0
    assert len(json.loads(ref.read_text())["mu_star"]) == 4
    assert main(["solve", "--scenario", str(scen), "--out", str(out), "--reference", str(ref),
                 "--max-iters", "3"]) == 2
    dists = [float(r[6]) for r in read_csv(out)[1:]]
    assert len(dists) == 3 and all(d >= 0 for d in dists)


def test_timing_fills_wall_column(scen, tmp_path):
    out = tmp_path / "t.csv"
    main(["solve", "--scenario", str(scen), "--out", str(out), "--max-iters", "2", "--timing"])
    assert all(float(r[8]) > 0 for r in read_csv(out)[1:])


def test_byte_identical_traces(scen, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["solve", "--scenario", str(scen), "--out", str(p), "--max-iters", "10"])
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv", [
    ["solve", "--method", "cpm", "--no-mu-box"],
    ["solve", "--beta", "1.5"],
    ["solve", "--epsilon", "0"],
    ["solve", "--rho", "-1"],
    ["solve", "--rho", "abc"],
    ["solve", "--method", "newton"],
    ["compare", "--methods", "bundle"],
    ["compare", "--methods", "bundle,bundle"],
    ["compare", "--methods", "bundle,simplex"],
])
def test_usage_and_config_errors(scen, argv, capsys):
    with_scen = argv[:1] + ["--scenario", str(scen)] + argv[1:]
    try:
        code = main(with_scen)
    except SystemExit as exc:
        code = exc.code
    assert code == 64
    assert capsys.readouterr().err


def test_missing_and_malformed_scenario(tmp_path):
    assert main(["solve", "--scenario", str(tmp_path / "none.json")]) == 64
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "drmarket.scenario/1", "surprise": 1}')
    assert main(["solve", "--scenario", str(bad)]) == 64


def test_max_iterations_exit_code(scen, tmp_path):
    assert main(["solve", "--scenario", str(scen), "--out", str(tmp_path / "m.csv"), "--max-iters", "2"]) == 2


def test_infeasible_exit_code(scen, tmp_path):
    d = json.loads(scen.read_text())
    for entry in d["network"]["base_load"]:
        entry["mw"] = [80.0] * 12
    bad = tmp_path / "heavy.json"
    bad.write_text(json.dumps(d))
    assert main(["solve", "--scenario", str(bad), "--out", str(tmp_path / "i.csv")]) == 3


def test_compare_bundle_cpm(scen, tmp_path, capsys):
    out, summ = tmp_path / "cmp.csv", tmp_path / "sum.csv"
    assert main(["compare", "--scenario", str(scen), "--methods", "bundle,cpm", "--out", str(out),
                 "--summary", str(summ)]) == 0
    text = out.read_text()
    assert text.startswith("# dist_to_mu_star is measured against the final mu of the")
    rows = read_csv(out)
    assert rows[0] == ["k", "bundle_D_mu", "bundle_eta", "bundle_step_type", "bundle_dist_to_mu_star",
                       "cpm_D_mu", "cpm_eta", "cpm_step_type", "cpm_dist_to_mu_star"]
    table = {r[0]: r for r in read_csv(summ)[1:]}
    assert table["bundle"][2] == table["cpm"][2] == "converged"
    assert float(table["cpm"][4]) >= 1.0
    assert rows[-1][1] == ""  # bundle finished first, so its columns run out
    assert "iters_ratio_vs_bundle" in capsys.readouterr().out


def test_compare_flags_subgradient_at_default_budget(scen, tmp_path):
    summ = tmp_path / "sum.csv"
    assert main(["compare", "--scenario", str(scen), "--methods", "bundle,subgradient", "--out",
                 str(tmp_path / "c.csv"), "--summary", str(summ)]) == 0
    table = {r[0]: r for r in read_csv(summ)[1:]}
    assert table["subgradient"][2] == "max_iterations"
    assert table["subgradient"][1] == "500"


def test_module_entry_point(scen):
    proc = subprocess.run([sys.executable, "-m", "drmarket", "solve", "--scenario", str(scen), "--max-iters", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stdout.splitlines()[0] == ",".join(TRACE_HEADER)
    assert "termination=max_iterations" in proc.stderr

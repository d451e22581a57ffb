import csv
import io
import json
import subprocess
import sys

import pytest

from bosonbound.cli import RunConfig, UsageError, main, parse_degrees, shipped_configs

from helpers import memory_oracle


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def num(x):
    return float(x) if x != "" else None


def test_config_round_trip():
    cfg = RunConfig(
        command="sweep", model="memory_buffer", params={"g2": "0.25"}, observable="n_a",
        degrees=[3, 4], sweep={"name": "eps_d", "values": ["0.5", "1"]}, cutoff=[24, 10], jobs=2,
    ).validate()
    again = RunConfig.loads(cfg.dumps()).validate()
    assert again == cfg


def test_config_validation():
    with pytest.raises(UsageError):
        RunConfig(model=None).validate()
    with pytest.raises(UsageError):
        RunConfig(model="cat", model_json={"modes": 1}).validate()
    with pytest.raises(UsageError):
        RunConfig(model="cat", degrees=[0]).validate()
    with pytest.raises(UsageError):
        RunConfig(command="sweep", model="cat").validate()
    with pytest.raises(UsageError):
        RunConfig(model="cat", sweep={"name": "alpha", "values": ["inf"]}).validate()
    assert RunConfig(model="cat", degrees=[5, 3, 3]).validate().degrees == [3, 5]


def test_parse_degrees():
    assert parse_degrees("3-8") == [3, 4, 5, 6, 7, 8]
    assert parse_degrees("2,4..5") == [2, 4, 5]


def test_bound_cat_csv(capsys):
    code, out, _ = run(capsys, "bound", "--model", "cat", "--degrees", "3-6")
    assert code == 0
    table = rows(out)
    assert [int(r["D"]) for r in table] == [3, 4, 5, 6]
    assert list(table[0]) == ["D", "lower", "upper", "gap", "rel_gap", "residual", "time"]
    rel = []
    for r in table:
        lo, up = float(r["lower"]), float(r["upper"])
        assert float(r["rel_gap"]) == (up - lo) / (up + lo)
        assert float(r["gap"]) == up - lo
        rel.append(float(r["rel_gap"]))
    assert all(b <= a for a, b in zip(rel, rel[1:]))


def test_identity_observable_rows(capsys):
    code, out, _ = run(capsys, "bound", "--model", "cat", "--observable", "1", "--degrees", "2,3")
    assert code == 0
    for r in rows(out):
        assert abs(float(r["lower"]) - 1) < 1e-7 and abs(float(r["upper"]) - 1) < 1e-7


def test_reproducible_csv(capsys):
    args = ("bound", "--model", "cat", "--degrees", "3,4", "--no-timing")
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b and rows(a)[0]["time"] == ""


def test_jobs_do_not_change_output(capsys):
    args = ("sweep", "--model", "cat", "--sweep", "alpha=1,2", "--degrees", "3,4", "--no-timing")
    _, serial, _ = run(capsys, *args)
    _, parallel, _ = run(capsys, *args, "--jobs", "2")
    assert serial == parallel
    assert [r["alpha"] for r in rows(serial)] == ["1", "1", "2", "2"]


def test_sweep_undriven_is_vacuum(capsys):
    code, out, _ = run(capsys, "sweep", "--model", "memory_buffer", "--sweep", "eps_d=0", "--degrees", "3", "--observable", "n_a")
    assert code == 0
    (r,) = rows(out)
    assert abs(float(r["lower"])) < 1e-7 and abs(float(r["upper"])) < 1e-7


def test_single_value_sweep_matches_bound(capsys):
    _, s, _ = run(capsys, "sweep", "--model", "cat", "--sweep", "alpha=1", "--degrees", "3", "--no-timing")
    _, b, _ = run(capsys, "bound", "--model", "cat", "--params", "alpha=1", "--degrees", "3", "--no-timing")
    sr, br = rows(s)[0], rows(b)[0]
    sr.pop("alpha")
    assert sr == br


def test_jsonl_output_files(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code, _, _ = run(capsys, "bound", "--model", "pure_loss", "--degrees", "2", "--out", str(out))
    assert code == 0
    recs = [json.loads(x) for x in (tmp_path / "run.jsonl").read_text().splitlines()]
    assert {r["sense"] for r in recs} == {"lower", "upper"}
    assert all(r["source"] == "relaxation" and r["model"] == "pure_loss" for r in recs)
    assert rows(out.read_text())[0]["D"] == "2"


def test_oracle_records(capsys):
    code, out, _ = run(capsys, "oracle", "--model", "cat", "--format", "jsonl")
    rec = json.loads(out)
    assert code == 0 and rec["kernel_dim"] == 1 and rec["source"] == "oracle"
    assert abs(rec["value"] - 0.6928377) < 1e-6
    code, out, _ = run(capsys, "oracle", "--model", "perfect_cat", "--format", "jsonl")
    rec = json.loads(out)
    assert rec["kernel_dim"] == 4 and rec["value"] is None
    assert abs(rec["min"] - 0.761594) < 1e-5 and abs(rec["max"] - 1.313035) < 1e-5
    code, out, _ = run(capsys, "oracle", "--model", "pure_loss", "--format", "jsonl", "--cutoff", "6")
    assert abs(json.loads(out)["value"]) < 1e-12


def test_compare_passes_on_shipped_models(capsys):
    assert run(capsys, "compare", "--model", "cat", "--degrees", "3-5")[0] == 0
    # degenerate model: interval containment against the extremal pair
    assert run(capsys, "compare", "--model", "perfect_cat", "--degrees", "4", "--scale", "1")[0] == 0


def test_compare_memory_buffer_sweep(capsys):
    for eps in ("0.5", "1", "2", "4"):
        memory_oracle(eps)  # warm the shared oracle cache
    code, out, err = run(
        capsys, "compare", "--model", "memory_buffer", "--observable", "n_a",
        "--sweep", "eps_d=0.5,1,2,4", "--degrees", "3", "--scale", "1",
    )
    assert code == 0, err
    assert len(rows(out)) == 4
    assert err.count("PASS") == 4


def test_compare_corrupted_tensor_fails(capsys):
    code, _, err = run(capsys, "compare", "--model", "cat", "--degrees", "3", "--corrupt-tensor")
    assert code == 3
    assert "FAIL" in err


def test_usage_errors(capsys):
    assert run(capsys, "bound", "--model", "nope")[0] == 1
    assert run(capsys, "bound", "--model", "cat", "--params", "beta=1")[0] == 1
    assert run(capsys, "bound", "--model", "cat", "--degrees", "0")[0] == 1
    with pytest.raises(SystemExit) as exc:
        main(["bound", "--bogus"])
    assert exc.value.code == 1


def test_resource_cap(capsys):
    assert run(capsys, "oracle", "--model", "memory_buffer", "--max-dimension", "100")[0] == 4


def test_solver_failure_exit(capsys):
    code, out, _ = run(capsys, "bound", "--model", "cat", "--degrees", "4", "--max-iters", "2")
    assert code == 2
    r = rows(out)[0]
    assert r["lower"] == "" and r["upper"] == ""


def test_shipped_configs():
    configs = shipped_configs()
    assert {"fig1", "fig2", "fig3"} <= set(configs)
    for text in configs.values():
        RunConfig.loads(text).validate()


def test_config_file_and_flag_precedence(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"command": "bound", "model": "cat", "degrees": [3, 4, 5], "timing": False}))
    code, out, _ = run(capsys, "bound", "--config", str(path), "--degrees", "3")
    assert code == 0 and [r["D"] for r in rows(out)] == ["3"]


def test_inline_json_model(tmp_path, capsys):
    from bosonbound.lindblad import build_model, spec_to_json

    path = tmp_path / "loss.json"
    path.write_text(json.dumps(spec_to_json(build_model("pure_loss"))))
    code, out, _ = run(capsys, "bound", "--model", str(path), "--degrees", "2")
    assert code == 0 and abs(float(rows(out)[0]["upper"])) < 1e-8


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "bosonbound.cli", "bound", "--model", "pure_loss", "--degrees", "1", "--no-timing"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("D,lower,upper")

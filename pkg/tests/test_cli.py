import json

import pytest

from ifs_ergodic import InvariantBreach, ValidationError, am2, calibrate
from ifs_ergodic import cli
from ifs_ergodic.systemfile import load_system, parse_system, system_to_json

AM2_FILE = """{
  "maps": [
    {"nodes": [[0, 0], [0.8, 0.4], [1, 1]]},
    {"nodes": [[0, 0], [0.2, 0.6], [1, 1]]}
  ],
  "probs": [0.5, 0.5]
}
"""


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def read(path):
    return json.loads(path.read_text())


def test_admissible(tmp_path):
    code, out = run(tmp_path, "admissible")
    assert code == 0
    rec = read(out / "admissible.json")
    assert rec["schema"] == "ifs-ergodic/1"
    assert rec["admissible"] is True
    assert rec["lyap0"] == pytest.approx(0.20273, abs=1e-5)
    man = read(out / "manifest.json")
    assert man["seed"] == 0 and len(man["config_hash"]) == 64
    assert {"python", "numpy", "numba"} <= set(man["versions"])
    assert "admissible.json" in man["files"]
    assert "timestamp" in read(out / "runtime.json")


def test_calibrate(tmp_path):
    code, out = run(tmp_path, "calibrate", "--alpha", "0.5", "--alphas", "0.1,0.99")
    assert code == 0
    rec = read(out / "calibration.json")
    ref = calibrate(am2(), 0.5)
    assert rec["delta"] == ref.delta and rec["M"] == ref.M and rec["epsilon"] == ref.epsilon
    lines = (out / "alpha_sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,delta,feasible" and lines[2].endswith(",False")


def test_system_file(tmp_path):
    f = tmp_path / "sys.json"
    f.write_text(AM2_FILE)
    code, out = run(tmp_path, "admissible", "--system", str(f))
    assert code == 0 and read(out / "admissible.json")["admissible"]


def test_malformed_probs_exit_1(tmp_path, capsys):
    f = tmp_path / "bad.json"
    f.write_text(AM2_FILE.replace("[0.5, 0.5]", "[0.5, 0.4]"))
    code, _ = run(tmp_path, "admissible", "--system", str(f))
    assert code == 1
    err = capsys.readouterr().err
    assert "sum to 0.9" in err and "bad.json:6" in err


def test_budget_exit_2(tmp_path, capsys):
    code, _ = run(tmp_path, "stability", "--n", "30", "--mode", "exact")
    assert code == 2
    assert "budget" in capsys.readouterr().err


def test_invariant_breach_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise InvariantBreach("chain state left [0, 1]")

    monkeypatch.setattr(cli, "check_admissible", boom)
    code, _ = run(tmp_path, "admissible")
    assert code == 3


def test_bad_arguments_exit_1(tmp_path):
    assert cli.main(["nonsense"]) == 1
    assert run(tmp_path, "sync", "--n-max", "0")[0] == 1
    assert run(tmp_path, "clt", "sums", "--start", "middle")[0] == 1


def test_config_then_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "params": {"x": 0.2, "y": 0.6, "n_list": [1, 2]}}))
    code, out = run(tmp_path, "stability", "--config", str(cfg), "--y", "0.7")
    assert code == 0
    rec = read(out / "stability.json")
    assert rec["x"] == 0.2 and rec["y"] == 0.7
    assert [r["n"] for r in rec["results"]] == [1, 2]
    assert read(out / "manifest.json")["seed"] == 5
    cfg.write_text(json.dumps({"params": {"bogus": 1}}))
    assert run(tmp_path, "stability", "--config", str(cfg))[0] == 1


def test_csv_format(tmp_path):
    code, out = run(tmp_path, "sync", "--n-max", "6")
    raw = (out / "sync.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "n_or_k,value,stderr,mode"
    assert lines[1].startswith("1,0.2") and lines[1].endswith(",exact")


@pytest.mark.parametrize(
    "argv,files",
    [
        (["simulate", "--n", "4", "--R", "2"], ["trajectories.csv"]),
        (["bounds", "escape", "--n-list", "1,16"], ["bounds.json"]),
        (["bounds", "boundary", "--alpha", "0.1", "--n", "6561", "--k", "9", "--x", "0.5"], ["bounds.json"]),
        (["bounds", "return", "--alpha", "0.1", "--n", "6561"], ["bounds.json"]),
        (["ergodic", "birkhoff", "--n", "100", "--R", "20"], ["birkhoff.json", "birkhoff.csv"]),
        (["ergodic", "cesaro", "--n-list", "2,4", "--n-burn", "50", "--R", "200"], ["cesaro.csv"]),
        (["ergodic", "dual", "--n-list", "2,4", "--n-burn", "50"], ["dual.csv"]),
        (["ergodic", "occupation", "--n", "50", "--streams", "20"], ["occupation.json"]),
        (["ergodic", "atoms", "--R", "2000", "--n-burn", "100"], ["atoms.json"]),
        (["clt", "sums", "--n", "50", "--R", "100"], ["samples.csv", "clt_report.json"]),
        (["clt", "ks", "--n", "50", "--R", "100"], ["ks.json"]),
        (["clt", "mw", "--n-list", "2,4", "--y-samples", "5"], ["mw.csv", "mw.json"]),
        (["clt", "charfn", "--n", "1", "--mode", "exact", "--t-grid", "0,1"], ["charfn.csv", "charfn_b.csv"]),
    ],
)
def test_subcommands(tmp_path, argv, files):
    code, out = run(tmp_path, *argv)
    assert code == 0
    for f in files:
        assert (out / f).exists()
    man = read(out / "manifest.json")
    assert set(files) <= set(man["files"])


def test_records_carry_mode(tmp_path):
    code, out = run(tmp_path, "bounds", "escape", "--n-list", "16")
    for chk in read(out / "bounds.json")["checks"]:
        assert chk["mode"] == "exact" and "stderr" in chk
    code, out = run(tmp_path, "clt", "charfn", "--n", "1", "--mode", "exact", "--t-grid", "1")
    rec = read(out / "charfn.json")
    assert rec["mode"] == "exact"


def test_reruns_are_byte_identical(tmp_path):
    argv = ["clt", "ks", "--n", "200", "--R", "300", "--start", "stationary", "--n-burn", "100", "--seed", "4"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([*argv, "--out", str(a), "--threads", "1"]) == 0
    assert cli.main([*argv, "--out", str(b), "--threads", "3"]) == 0
    for f in a.iterdir():
        if f.name != "runtime.json":
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_reflection_symmetry_check():
    assert cli.reflection_symmetric(am2())
    assert not cli.reflection_symmetric(am2((0.4, 0.6)))


# --- system files -----------------------------------------------------------


def test_parse_round_trip():
    s = parse_system(AM2_FILE)
    assert s.maps == am2().maps
    assert parse_system(system_to_json(s)).maps == s.maps
    assert load_system("am2").maps == s.maps


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("{\n  \"maps\": [\n", 3, "invalid JSON"),
        (AM2_FILE.replace("[0.8, 0.4]", "[0.8, 0.9], [0.7, 0.95]"), 3, "map 1"),
        (AM2_FILE.replace("[0.2, 0.6]", "[0.2, -0.6]"), 4, "map 2"),
        (AM2_FILE.replace('"probs": [0.5, 0.5]', '"probs": 0.5'), 6, "'probs' must be a list"),
        (AM2_FILE.replace('{"nodes": [[0, 0], [0.2, 0.6], [1, 1]]}', '{"knots": []}'), 4, "map 2 needs"),
    ],
)
def test_parse_diagnostics(text, line, fragment):
    with pytest.raises(ValidationError) as e:
        parse_system(text, "f.json")
    assert f"f.json:{line}" in str(e.value) and fragment in str(e.value)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="cannot read"):
        load_system(tmp_path / "nope.json")

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from famgwas.cli import main


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--preset", "trio-k001", "--set", "n=120", "--set", "markers=25",
                 "--set", "causal=0", "--set", "miscall=0.01", "--seed", "4", "--out", str(d)]) == 0
    return d


def _io(d):
    return ["--ped", str(d / "sim.ped"), "--map", str(d / "sim.map")]


def test_simulate_is_deterministic(simulated, tmp_path):
    assert main(["simulate", "--preset", "trio-k001", "--set", "n=120", "--set", "markers=25",
                 "--set", "causal=0", "--set", "miscall=0.01", "--seed", "4",
                 "--out", str(tmp_path)]) == 0
    for name in ("sim.ped", "sim.map"):
        assert (tmp_path / name).read_bytes() == (simulated / name).read_bytes()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == "simulate" and man["seed"] == 4
    assert man["flags"]["set"] == ["n=120", "markers=25", "causal=0", "miscall=0.01"]


def test_qc_fbat_tdt_screen(simulated, tmp_path):
    assert main(["qc", *_io(simulated), "--out", str(tmp_path / "qc")]) == 0
    qc = tmp_path / "qc"
    assert (qc / "qc_report.tsv").read_text().startswith("## summary\n")
    man = json.loads((qc / "manifest.json").read_text())
    assert set(man["inputs"]) == {str(simulated / "sim.ped"), str(simulated / "sim.map")}
    assert all(len(h) == 64 for h in man["inputs"].values())
    assert man["version"] and man["started"] and man["finished"]
    clean = ["--ped", str(qc / "clean.ped"), "--map", str(qc / "clean.map")]

    assert main(["fbat", *clean, "--model", "recessive", "--risk-allele", "2",
                 "--out", str(tmp_path / "f"), "--threads", "2"]) == 0
    rows = _rows(tmp_path / "f" / "fbat.tsv")
    assert rows and {"marker_id", "U", "var0", "Z", "p", "status", "significant"} <= set(rows[0])
    assert main(["tdt", *clean, "--risk-allele", "2", "--out", str(tmp_path / "t")]) == 0
    for r in _rows(tmp_path / "t" / "tdt.tsv"):
        b, c = int(r["b"]), int(r["c"])
        if b + c and r["Z"] != "NA":
            assert float(r["Z"]) ** 2 == pytest.approx((b - c) ** 2 / (b + c))
    assert main(["screen", *clean, "--k", "3", "--out", str(tmp_path / "s")]) == 0
    dec = _rows(tmp_path / "s" / "decisions.tsv")
    assert sum(int(r["tested"]) for r in dec) == 3


def test_power_closed_form(tmp_path, capsys):
    assert main(["power", "--design", "cc", "--p", "0.1", "--rho", "1.75", "--prevalence", "0.01",
                 "--n", "1500", "--out", str(tmp_path)]) == 0
    row = _rows(tmp_path / "power.tsv")[0]
    assert float(row["expected_z"]) == pytest.approx(1.7571, abs=1e-4)
    assert "expected_z" in capsys.readouterr().out
    assert main(["power", "--design", "trio", "--grid", "0.1:0.3:0.1", "--odds-ratio", "1.75",
                 "--prevalence", "0.14", "--n", "1500", "--out", str(tmp_path)]) == 0
    assert [float(r["p"]) for r in _rows(tmp_path / "power.tsv")] == [0.1, 0.2, 0.3]


def test_power_monte_carlo(tmp_path):
    assert main(["power", "--design", "dst", "--p", "0.3", "--odds-ratio", "1.75",
                 "--prevalence", "0.14", "--n", "200", "--replicates", "50", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    row = _rows(tmp_path / "power.tsv")[0]
    assert 0 <= float(row["power"]) <= 1 and row["replicates"] == "50"


@pytest.mark.parametrize("argv", [
    [],
    ["fbat", "--map", "x.map"],
    ["power", "--design", "cc", "--p", "0.1", "--rho", "2", "--odds-ratio", "2",
     "--prevalence", "0.1", "--n", "10"],
    ["power", "--design", "cc", "--rho", "2", "--prevalence", "0.1", "--n", "10"],
    ["qc", "--ped", "a", "--map", "b", "--min-maf", "2"],
    ["screen", "--ped", "a", "--map", "b", "--k", "0"],
    ["simulate", "--preset", "nope"],
    ["simulate", "--preset", "trio-k014-scan", "--set", "colour=red"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    if "--out" not in argv and argv:
        argv = argv + ["--out", str(tmp_path)]
    assert main(argv) == 2


def test_malformed_input_exits_1_with_location(simulated, tmp_path, capsys):
    lines = (simulated / "sim.ped").read_text().splitlines()
    tok = lines[4].split()
    tok[5] = "abc"
    lines[4] = " ".join(tok)
    bad = tmp_path / "bad.ped"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["fbat", "--ped", str(bad), "--map", str(simulated / "sim.map"),
                 "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "bad.ped" in err and ":5" in err and "phenotype" in err
    assert main(["fbat", "--ped", str(tmp_path / "missing.ped"), "--map",
                 str(simulated / "sim.map"), "--out", str(tmp_path)]) == 1
    assert not (tmp_path / "fbat.tsv").exists()


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "famgwas.cli", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0


def test_power_cli_does_not_import_sklearn():
    code = ("import sys; from famgwas.cli import main; "
            "main(['power','--design','cc','--p','0.1','--rho','1.75','--prevalence','0.01',"
            "'--n','1500','--out',sys.argv[1]]); print('sklearn' in sys.modules)")
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        out = subprocess.run([sys.executable, "-c", code, d], capture_output=True, text=True)
    assert out.stdout.strip().endswith("False")

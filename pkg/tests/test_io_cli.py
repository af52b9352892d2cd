import json
import os
import subprocess
import sys as _sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from switchlyap import io
from switchlyap.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, parse_ngrid, run_command
from switchlyap.errors import InvalidInput
from switchlyap.flows import Signal

ROT = {"d": 2, "N": 2, "matrices": [[[0, -1], [1, -1]], [[0, 1], [-1, -1]]],
       "markov": {"nu": [0.5, 0.5], "mu": 1.0, "P": [[0.5, 0.5], [0.5, 0.5]]}}
LADDER = {"N": 4, "rates": [
    {"from": 1, "to": 2, "coeff": 1, "exponent": 0.5},
    {"from": 2, "to": 1, "coeff": 1, "exponent": 1},
    {"from": 2, "to": 3, "coeff": 1, "exponent": 0.5},
    {"from": 3, "to": 2, "coeff": 1, "exponent": 0.5},
    {"from": 4, "to": 3, "coeff": 1, "exponent": 0.5},
    {"from": 3, "to": 4, "coeff": 1, "exponent": 1}]}


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def run(argv, capsys):
    code = run_command(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestParsing:
    def test_system_round_trip(self):
        sys, params, w = io.system_from_dict(ROT)
        assert sys.N == 2 and params.mu == 1.0 and w is None
        assert io.system_from_dict(io.system_to_dict(sys, params))[0].modes.tolist() == \
            sys.modes.tolist()

    @pytest.mark.parametrize("mutate, field", [
        (lambda d: d["markov"].pop("mu"), "markov"),
        (lambda d: d.update(N=0), "N"),
        (lambda d: d.update(N=3), "matrices"),
        (lambda d: d["matrices"][1].append([0, 0]), "matrices/1"),
        (lambda d: d["markov"].update(nu=[0.5, 0.6]), "markov"),
        (lambda d: d.update(extra=1), "<root>"),
        (lambda d: d.update(hull_weights=[0.2, 0.2]), "hull_weights"),
    ])
    def test_system_errors_name_the_field(self, mutate, field):
        doc = json.loads(json.dumps(ROT))
        mutate(doc)
        with pytest.raises(InvalidInput, match=f"^{field}"):
            io.system_from_dict(doc)

    def test_rate_family(self):
        fam, modes = io.rate_family_from_dict(dict(LADDER, modes=[1, 2, 3, 4]))
        assert fam.N == 4 and modes.tolist() == [0, 1, 2, 3]
        assert fam.entries[1] == (1, 0, 1.0, 1.0)
        bad = json.loads(json.dumps(LADDER))
        bad["rates"][0]["to"] = 9
        with pytest.raises(InvalidInput, match="rates/0/to"):
            io.rate_family_from_dict(bad)
        bad["rates"][0]["to"] = 2
        bad["rates"][0]["coeff"] = 0
        with pytest.raises(InvalidInput, match="rates/0/coeff"):
            io.rate_family_from_dict(bad)

    def test_file_errors(self, tmp_path):
        with pytest.raises(InvalidInput, match="cannot read"):
            io.load_json(tmp_path / "missing.json")
        p = tmp_path / "bad.json"
        p.write_text("{")
        with pytest.raises(InvalidInput, match="malformed"):
            io.load_json(p)

    @given(st.integers(1, 3), st.integers(1, 3),
           st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=27, max_size=27))
    def test_serialization_byte_identical(self, d, N, vals):
        mats = np.array(vals[:N * d * d]).reshape(N, d, d).tolist()
        text = io.dumps({"d": d, "N": N, "matrices": mats})
        sys, _, _ = io.system_from_dict(json.loads(text))
        assert io.dumps(io.system_to_dict(sys)) == text

    def test_jsonable(self):
        doc = io.to_jsonable({"s": Signal([1.0, 2.0], [0, 1]), "x": np.float64(np.inf),
                              "n": np.nan, "b": np.bool_(True), "a": np.arange(2)})
        assert doc == {"s": [[1.0, 1], [2.0, 2]], "x": "inf", "n": "nan",
                       "b": True, "a": [0, 1]}

    def test_ngrid(self):
        assert parse_ngrid("1e3:1e7") == pytest.approx([1e3, 1e4, 1e5, 1e6, 1e7])
        assert len(parse_ngrid("1e3:1e7:9")) == 9
        assert parse_ngrid("1,10,100") == [1.0, 10.0, 100.0]
        for bad in ("1e3:1e4", "5:1", "a:b", "1e3:1e7:2"):
            with pytest.raises(InvalidInput):
                parse_ngrid(bad)


class TestCli:
    def test_det(self, tmp_path, capsys):
        code, out, _ = run(["det", "--input", write(tmp_path, "s.json", ROT),
                            "--depth", "6"], capsys)
        doc = json.loads(out)
        assert code == EXIT_OK and doc["lower"] <= doc["upper"] <= 1e-9
        assert all(1 <= i <= 2 for _, i in doc["witness"])

    def test_missing_field_exit_2(self, tmp_path, capsys):
        doc = json.loads(json.dumps(ROT))
        del doc["markov"]["mu"]
        code, _, err = run(["prob", "--input", write(tmp_path, "s.json", doc)], capsys)
        assert code == EXIT_INPUT and "markov" in err and "'mu'" in err

    def test_zero_modes_exit_2(self, tmp_path, capsys):
        doc = dict(ROT, N=0)
        code, _, err = run(["det", "--input", write(tmp_path, "s.json", doc)], capsys)
        assert code == EXIT_INPUT and err.startswith("error: ")

    def test_bad_arguments_exit_2(self, tmp_path, capsys):
        path = write(tmp_path, "s.json", ROT)
        assert run(["det", "--input", path, "--threads", "0"], capsys)[0] == EXIT_INPUT
        assert run(["nope"], capsys)[0] == EXIT_INPUT
        assert run(["limit", "--input", write(tmp_path, "r.json", LADDER)],
                   capsys)[0] == EXIT_INPUT

    def test_numeric_failures_exit_3(self, tmp_path, capsys):
        slow = {"N": 2, "rates": [{"from": 1, "to": 2, "coeff": 1, "exponent": 0},
                                  {"from": 2, "to": 1, "coeff": 1, "exponent": 0}]}
        code, _, err = run(["limit", "--input", write(tmp_path, "r.json", slow),
                            "--system", write(tmp_path, "s.json", ROT)], capsys)
        assert code == EXIT_NUMERIC and "error:" in err
        rot = {"d": 2, "N": 1, "matrices": [[[0, 1], [-1, 0]]]}
        code, _, _ = run(["sphere", "--input", write(tmp_path, "one.json", rot),
                          "--T", "5"], capsys)
        assert code == EXIT_NUMERIC

    def test_hierarchy(self, tmp_path, capsys):
        code, out, _ = run(["hierarchy", "--input", write(tmp_path, "r.json", LADDER)],
                           capsys)
        doc = json.loads(out)
        assert code == EXIT_OK and doc["case"] == "markov-limit"
        assert doc["levels"][1]["classes"] == [[1], [4]]
        assert doc["levels"][1]["delta"] == [2, 3]

    def test_outputs_deterministic_and_manifest(self, tmp_path):
        path = write(tmp_path, "s.json", ROT)
        base = ["mu-scan", "--input", path, "--T", "10", "--traj", "4", "--mu", "1,10"]
        assert run_command(base + ["--out", str(tmp_path / "a.json")]) == EXIT_OK
        assert run_command(base + ["--out", str(tmp_path / "b.json"),
                                   "--threads", "3"]) == EXIT_OK
        a, b = (tmp_path / "a.json").read_bytes(), (tmp_path / "b.json").read_bytes()
        assert a == b
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == "mu,value,stderr,T,n_traj"
        man = json.loads((tmp_path / "b.json.manifest.json").read_text())
        assert "--threads" not in man["argv"] and man["seed"] == 0
        assert man["inputs"] == {path: io.sha256_file(path)}
        assert {"numpy", "scipy", "numba", "python"} <= set(man["versions"])

    def test_module_entry_and_logging(self, tmp_path):
        path = write(tmp_path, "s.json", ROT)
        env = dict(os.environ, SWITCHLYAP_LOG="info")
        res = subprocess.run([_sys.executable, "-m", "switchlyap", "mu-scan", "--input",
                              path, "--T", "5", "--traj", "2", "--mu", "1"],
                             capture_output=True, text=True, env=env)
        assert res.returncode == 0 and "INFO" in res.stderr
        assert json.loads(res.stdout.split("\nmu,")[0])["scan"][0]["mu"] == 1.0

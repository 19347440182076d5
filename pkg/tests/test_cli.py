import csv
import io
import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from orbitshare.cli import (
    SWEEP_PAIRS_COLUMNS,
    SWEEP_RATE_COLUMNS,
    fmt,
    run_command,
)

PAPER_CFG = str(Path(__file__).resolve().parents[1] / "examples" / "paper.cfg")


def run(capsys, *argv):
    code = run_command(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestLinkbudget:
    def test_override(self, capsys):
        code, out, _ = run(capsys, "linkbudget", "--config", PAPER_CFG)
        assert code == 0
        r = rows(out)
        assert [x["receiver"] for x in r] == ["leo", "geo"]
        assert float(r[0]["snr_db"]) == 5.36 and float(r[1]["snr_db"]) == -2.99

    def test_computed(self, capsys):
        code, out, _ = run(capsys, "linkbudget", "--config", PAPER_CFG, "--no-override")
        r = rows(out)
        assert float(r[0]["snr_db"]) == pytest.approx(5.45, abs=0.01)
        assert float(r[1]["snr_db"]) == pytest.approx(-2.95, abs=0.01)


class TestDeThreshold:
    def test_tau_zero_json(self, capsys):
        code, out, _ = run(capsys, "de-threshold", "--tau", "0", "--json")
        assert code == 0
        assert json.loads(out)["results"][0]["threshold_g"] == pytest.approx(0.5, abs=1e-3)

    def test_from_rate(self, capsys):
        code, out, _ = run(capsys, "de-threshold", "--snr-db", "5.36", "--rate", "1.0")
        (r,) = rows(out)
        assert r["tau"] == "0" and float(r["approx_max_throughput"]) == pytest.approx(0.25, abs=1e-3)

    def test_needs_input(self, capsys):
        code, _, err = run(capsys, "de-threshold")
        assert code == 1 and "error" in err


class TestSimulate:
    argv = ("simulate", "--scenario", "a", "--rate", "1.0", "--load", "0.5", "--frames", "10", "--seed", "7")

    def test_byte_identical_reruns(self, capsys):
        _, first, _ = run(capsys, *self.argv)
        _, second, _ = run(capsys, *self.argv)
        _, third, _ = run(capsys, *self.argv, "--jobs", "2")
        assert first == second == third
        assert rows(first)[0]["u_leo"] == "200"

    def test_seed_changes_output(self, capsys):
        _, a, _ = run(capsys, *self.argv)
        _, b, _ = run(capsys, *self.argv[:-1], "8")
        assert a != b

    def test_shared(self, capsys):
        code, out, _ = run(capsys, "simulate", "--scenario", "b", "--alpha", "8", "--rate", "2.0",
                           "--load", "1.0", "--frames", "5", "--config", PAPER_CFG)
        assert code == 0
        leo, geo = rows(out)
        assert (leo["service"], geo["service"]) == ("leo", "geo")
        assert float(geo["rate"]) == 0.25 and leo["u_geo"] == "44"

    def test_infeasible_rate(self, capsys):
        code, out, err = run(capsys, "simulate", "--rate", "9", "--load", "0.5", "--frames", "2")
        assert code == 1 and out == "" and "capacity" in err

    def test_bad_alpha(self, capsys):
        code, _, _ = run(capsys, "simulate", "--scenario", "b", "--alpha", "7", "--rate", "1",
                         "--load", "1", "--frames", "2")
        assert code == 1


class TestErrors:
    def test_unknown_command(self, capsys):
        assert run(capsys, "bogus")[0] == 1

    def test_bad_config(self, capsys, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[frame]\nalpha = 7\n")
        code, out, err = run(capsys, "linkbudget", "--config", str(p))
        assert code == 1 and out == "" and "alpha 7" in err

    def test_lenient(self, capsys, tmp_path):
        p = tmp_path / "extra.cfg"
        p.write_text(Path(PAPER_CFG).read_text() + "\n[run]\ncolour = blue\n".replace("[run]\n", ""))
        assert run(capsys, "linkbudget", "--config", str(p))[0] == 1
        code, _, err = run(capsys, "linkbudget", "--config", str(p), "--lenient")
        assert code == 0 and "unknown key" in err

    def test_missing_config_file(self, capsys, tmp_path):
        assert run(capsys, "linkbudget", "--config", str(tmp_path / "none.cfg"))[0] == 1

    def test_env_jobs(self, capsys, monkeypatch):
        monkeypatch.setenv("ORBITSHARE_JOBS", "x")
        assert run(capsys, "de-threshold", "--tau", "0")[0] == 1

    def test_runtime_failure(self, capsys, monkeypatch):
        import orbitshare.cli as cli

        def boom(args, cfg):
            raise RuntimeError("disk on fire")

        monkeypatch.setitem(cli.COMMANDS, "linkbudget", boom)
        code, _, err = run(capsys, "linkbudget")
        assert code == 2 and "disk on fire" in err


class TestSweeps:
    def test_sweep_rate_files(self, capsys, tmp_path):
        argv = ["sweep-rate", "--service", "leo", "--rates", "0.8", "1.0", "5.0", "--frames", "20",
                "--seed", "3", "--config", PAPER_CFG]
        code, _, err = run(capsys, *argv, "--out", str(tmp_path / "one"))
        assert code == 0
        text = (tmp_path / "one" / "sweep-rate.csv").read_text()
        r = rows(text)
        assert tuple(r[0]) == SWEEP_RATE_COLUMNS
        assert {x["rate"] for x in r} == {"0.80000000000000004", "1"}
        assert sum(x["is_peak"] == "true" for x in r) == 2
        summary = json.loads((tmp_path / "one" / "sweep-rate.json").read_text())
        assert summary["skipped_rates"]["leo"] == [5.0]
        run(capsys, *argv, "--out", str(tmp_path / "two"), "--jobs", "2")
        for name in ("sweep-rate.csv", "sweep-rate.json"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_sweep_pairs(self, capsys, tmp_path):
        argv = ["sweep-pairs", "--alphas", "8", "--beta", "1", "--min-rate", "2.0", "--frames", "10",
                "--bench-leo", "0.637", "--bench-geo", "0.465", "--config", PAPER_CFG,
                "--load-step", "0.5"]
        code, out, _ = run(capsys, *argv)
        assert code == 0
        r = rows(out)
        assert tuple(r[0]) == SWEEP_PAIRS_COLUMNS
        for x in r:
            assert float(x["rate_leo"]) == pytest.approx(8 * float(x["rate_geo"]))
            assert float(x["bench_leo"]) == 0.637
        _, again, _ = run(capsys, *argv, "--jobs", "2")
        assert again == out


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(fmt(x)) == x

from __future__ import annotations

import json
from importlib import resources

import pytest

from tailrsm.cli import main

from conftest import corpus_path

EXPECTED = ["skip", "walk2d_plain", "walk2d", "walk2d_variant", "coupon2", "coupon4", "walk_int", "walk_real",
            "long_walk", "walk_adv"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_coupon(capsys):
    code, out, _ = run(capsys, "analyze", "--max-moment", "3", corpus_path("coupon2"))
    doc = json.loads(out)
    assert code == 0 and doc["schema"] == 1 and doc["status"] == "Optimal"
    assert doc["bounds"] == pytest.approx([13, 201, 3829], rel=1e-9)
    assert set(doc["witness"]["l0"]["1"]) == {"coefficients", "intercept"}
    assert doc["lp_stats"]["lps"][0]["status"] == "Optimal"


def test_analyze_infeasible_exit_1(capsys):
    code, out, _ = run(capsys, "analyze", "--max-moment", "2", corpus_path("walk_int"))
    doc = json.loads(out)
    assert code == 1 and doc["status"] == "Infeasible"
    assert doc["bounds"][0] == pytest.approx(20) and doc["bounds"][1] is None
    assert doc["failed_constraints"]


@pytest.mark.parametrize("name", EXPECTED)
def test_analyze_matches_fixture(capsys, name):
    ref = json.loads(resources.files("tailrsm").joinpath(f"corpus/expected/{name}.json").read_text())
    K = len(ref["bounds"])
    code, out, _ = run(capsys, "analyze", "--max-moment", str(K), corpus_path(name))
    doc = json.loads(out)
    assert doc["status"] == ref["status"]
    assert code == (0 if ref["status"] == "Optimal" else 1)
    for a, b in zip(doc["bounds"], ref["bounds"]):
        assert (a is None) == (b is None)
        if a is not None:
            assert a == pytest.approx(b, rel=1e-9)


def test_byte_identical_output(capsys, tmp_path):
    outs = []
    for i in range(2):
        f = tmp_path / f"a{i}.json"
        assert main(["analyze", "--max-moment", "3", "--out", str(f), corpus_path("walk_adv")]) == 0
        outs.append(f.read_bytes())
    assert outs[0] == outs[1]
    a = run(capsys, "simulate", "--trials", "500", "--seed", "4", "--scheduler", "uniform", corpus_path("walk2d"))
    b = run(capsys, "simulate", "--trials", "500", "--seed", "4", "--scheduler", "uniform", "--threads", "3",
            corpus_path("walk2d"))
    assert a == b


def test_timing_flag(capsys):
    _, out, _ = run(capsys, "analyze", "--timing", corpus_path("skip"))
    assert "seconds" in json.loads(out)
    _, out, _ = run(capsys, "analyze", corpus_path("skip"))
    assert "seconds" not in json.loads(out)


def test_emit_lp(capsys, tmp_path):
    from tailrsm.lp import read_lp, solve

    f = tmp_path / "c.lp"
    code, _, _ = run(capsys, "analyze", "--max-moment", "2", "--emit-lp", str(f), corpus_path("coupon2"))
    assert code == 0
    sol = solve(read_lp(f.read_text()))
    assert sol.objective == pytest.approx(201, rel=1e-9)


def test_tail_moments(capsys):
    code, out, _ = run(capsys, "tail", "--moments", "68,3124,171932,12049876,1048131068", "--deadline", "100")
    doc = json.loads(out)
    assert code == 0
    assert doc["bounds"][0]["bound"] == pytest.approx(0.105, abs=5e-4)
    assert doc["bounds"][0]["k"] == 5


def test_tail_from_analysis(capsys, tmp_path):
    f = tmp_path / "a.json"
    main(["analyze", "--max-moment", "3", "--out", str(f), corpus_path("coupon2")])
    csv = tmp_path / "c.csv"
    code, out, _ = run(capsys, "tail", "--from", str(f), "--deadline", "1000", "--target", "0.01",
                       "--curve", "1,1000", "--points", "8", "--csv", str(csv))
    doc = json.loads(out)
    assert code == 0
    assert doc["bounds"][0]["bound"] == pytest.approx(3.829e-6, rel=1e-9)
    assert doc["deadline"]["d"] > 0
    assert csv.read_text().startswith("d,curve_1,curve_2,curve_3,envelope\n")


def test_simulate(capsys, tmp_path):
    csv = tmp_path / "s.csv"
    code, out, _ = run(capsys, "simulate", "--trials", "2000", "--max-moment", "2", "--deadline", "20",
                       "--csv", str(csv), corpus_path("coupon2"))
    doc = json.loads(out)
    assert code == 0 and doc["timeouts"] == 0
    assert abs(doc["moments"][0]["mean"] - 13) < 4 * doc["moments"][0]["stderr"]
    assert 0 < doc["tail"]["p_hat"] < 1
    assert len(csv.read_text().splitlines()) == 2001


def test_simulate_count_at(capsys):
    code, out, _ = run(capsys, "simulate", "--trials", "5000", "--count-at", "l3", corpus_path("poly_tail"))
    assert code == 0 and json.loads(out)["moments"][0]["mean"] < 1


def test_simulate_zero_trials_exit_2(capsys):
    code, _, err = run(capsys, "simulate", "--trials", "0", corpus_path("coupon2"))
    assert code == 2 and "trials" in err


def test_oracle_gap(capsys):
    code, out, _ = run(capsys, "oracle", "--example", "gap", "--policy-p", "0.5")
    doc = json.loads(out)
    assert code == 0
    assert doc["value_iteration"]["moments"]["l0"] == pytest.approx([6, 37.5])
    assert doc["sweep"]["maxima"] == pytest.approx([6, 36.5])
    assert doc["bernoulli"][0]["moments"] == pytest.approx([5.75, 36.25])


def test_oracle_program(capsys):
    code, out, _ = run(capsys, "oracle", "--max-moment", "3", corpus_path("coupon2"))
    doc = json.loads(out)
    assert doc["states"] == 11
    assert doc["exact"]["l0(x=0, y=0)"] == pytest.approx([13, 201, 3829])


def test_parse_compile_dump(capsys):
    code, out, _ = run(capsys, "parse", corpus_path("poly_tail"))
    assert code == 0 and json.loads(out)["classification"] == "polynomial"
    code, out, _ = run(capsys, "compile", corpus_path("walk2d_plain"))
    assert code == 0 and json.loads(out)["kinds"]["l4"] == "N"
    code, out, _ = run(capsys, "dump", "--format", "json", corpus_path("skip"))
    assert code == 0 and json.loads(out)["exit"] == "l1"
    code, out, _ = run(capsys, "dump", "--format", "text", corpus_path("skip"))
    assert "exit" in out


def test_sdp_round_trip(capsys, tmp_path):
    src = tmp_path / "g.rp"
    src.write_text("while prob(1/2) do skip od\n")
    prefix = tmp_path / "g"
    code, out, _ = run(capsys, "sdp-export", "--max-moment", "1", "--degree", "2", "--prefix", str(prefix), str(src))
    assert code == 0 and json.loads(out)["structure"]["blocks"] == 5
    cert = {"schema": 1, "params": {"@b.l0.k1": 3, "@b.l1.k1": 4, "@b.l2.k1": 0},
            "blocks": [[[3]], [[0]], [[4]], [[0]], [[0]]]}
    (tmp_path / "c.json").write_text(json.dumps(cert))
    args = ["sdp-check", "--sdpa", f"{prefix}.dat-s", "--mapping", f"{prefix}.map.json"]
    code, out, _ = run(capsys, *args, "--cert", str(tmp_path / "c.json"), "--program", str(src))
    assert code == 0 and json.loads(out)["bounds"] == [3.0]
    cert["blocks"][1] = [[-0.5]]
    cert["params"]["@b.l0.k1"] = 2.5
    cert["blocks"][0] = [[2.5]]
    (tmp_path / "bad.json").write_text(json.dumps(cert))
    code, out, _ = run(capsys, *args, "--cert", str(tmp_path / "bad.json"))
    assert code == 1 and json.loads(out)["status"] == "Rejected"


@pytest.mark.parametrize("argv", [
    ["analyze", "/nonexistent.rp"],
    ["analyze", "--degree", "2", "X"],
    ["tail", "--deadline", "3"],
    ["tail", "--moments", "1,2", "--target", "2"],
    ["frobnicate"],
])
def test_usage_errors(capsys, argv):
    if "X" in argv:
        argv = [a if a != "X" else corpus_path("skip") for a in argv]
    assert main(argv) == 2


def test_invalid_program_exit_2(capsys, tmp_path):
    f = tmp_path / "bad.rp"
    f.write_text("x := ")
    code, _, err = run(capsys, "parse", str(f))
    assert code == 2 and "error" in err


def test_polynomial_program_rejected_by_linear(capsys):
    code, _, err = run(capsys, "analyze", corpus_path("poly_tail"))
    assert code == 2 and "polynomial" in err


def test_help_documents_grammar(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "while" in out and "ndet" in out


def test_internal_error_exit_3(capsys, monkeypatch):
    import tailrsm.cli as cli

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "synthesize", boom)
    assert main(["analyze", corpus_path("skip")]) == 3


def test_threads_env(monkeypatch):
    import tailrsm.cli as cli

    monkeypatch.setenv("TAILRSM_THREADS", "4")
    assert cli._threads() == 4
    monkeypatch.setenv("TAILRSM_THREADS", "x")
    assert cli._threads() == 1

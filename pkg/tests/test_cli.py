import csv
import json

import numpy as np
import pytest

from circuithmm.cli import build_parser, demo_resistance, main, parse_blocked
from circuithmm.errors import DataError


def _grid(recs, key, rows=24, cols=12):
    out = np.zeros((rows, cols))
    for r in recs:
        out[r["row"], r["col"]] = r[key]
    return out


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_parse_blocked():
    assert parse_blocked("1-2:0-1;5:3", 8, 4) == {(1, 0), (1, 1), (2, 0), (2, 1), (5, 3)}
    assert parse_blocked("", 8, 4) == set()
    for bad in ("1-2", "9:0", "a:b", "3-1:0"):
        with pytest.raises(DataError):
            parse_blocked(bad, 8, 4)


def test_demo_unblocked_is_row_symmetric():
    recs = demo_resistance(blocked="")
    thru = _grid(recs, "throughput")
    eff = _grid(recs, "effective_current")
    np.testing.assert_allclose(thru, thru[:, :1] * np.ones(12), atol=1e-8, rtol=0)
    np.testing.assert_allclose(eff, eff[:, ::-1], atol=1e-8, rtol=0)


def test_demo_blocked_segment_carries_less():
    recs = demo_resistance(blocked="10-13:5")
    blocked = _grid(recs, "blocked").astype(bool)
    for key in ("throughput", "effective_current"):
        g = _grid(recs, key)
        for r in range(10, 14):
            assert g[r, blocked[r]].max() < g[r, ~blocked[r]].min()


def test_demo_factor_one_matches_unblocked():
    a = demo_resistance(blocked="3-8:2-6", factor=1.0)
    b = demo_resistance(blocked="")
    for ra, rb in zip(a, b):
        assert ra["voltage"] == pytest.approx(rb["voltage"], abs=1e-14)
        assert ra["throughput"] == pytest.approx(rb["throughput"], abs=1e-14)


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        for action in sp._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} has no help text"
    assert main(["--help"]) == 0
    assert "demo-resistance" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["simulate", "--bogus"]) == 2
    assert main(["transition", "--graph", "lattice:3x3", "--q", "5", "--rho", "1", "--nu", "1",
                 "--delta", "1", "--out", "x"]) == 2


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--graph", "lattice:12x5", "--steps", "10", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    params = json.loads((tmp_path / "a" / "params.json").read_text())
    assert len(params["thetas"]) == 10


def test_simulate_censors(tmp_path):
    assert main(["simulate", "--graph", "lattice:12x5", "--seed", "1", "--censor", "0.3",
                 "--out", str(tmp_path)]) == 0
    with open(tmp_path / "counts.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(float(r["effort_hours"]) == 0 for r in rows) == 180
    assert len(json.loads((tmp_path / "params.json").read_text())["censored_cells"]) == 180


def test_fit_dimension_mismatch(tmp_path, capsys):
    main(["simulate", "--graph", "lattice:12x5", "--steps", "3", "--out", str(tmp_path / "sim")])
    capsys.readouterr()
    code = main(["fit", "--graph", "lattice:3x3", "--counts", str(tmp_path / "sim" / "counts.csv"),
                 "--out", str(tmp_path / "fit")])
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "DimensionMismatch"


def test_missing_file_is_data_error(tmp_path, capsys):
    assert main(["censor", "--counts", str(tmp_path / "nope.csv"), "--fraction", "0.1",
                 "--out", str(tmp_path / "c.csv")]) == 3
    assert json.loads(capsys.readouterr().err)["exit_code"] == 3


def test_invalid_parameters_exit_codes(tmp_path, capsys):
    assert main(["transition", "--graph", "lattice:3x3", "--q", "1", "--rho", "-1", "--nu", "1",
                 "--delta", "1", "--out", str(tmp_path)]) == 3
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"sampler": {"n_iterations": 0}}))
    main(["simulate", "--graph", "lattice:3x3", "--steps", "2", "--out", str(tmp_path / "s")])
    assert main(["fit", "--graph", "lattice:3x3", "--counts", str(tmp_path / "s" / "counts.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "f")]) == 2


def test_coincident_centroids_is_data_error(tmp_path):
    g = {"nodes": [{"id": "a", "x": 0, "y": 0}, {"id": "b", "x": 0, "y": 0}],
         "edges": [{"a": "a", "b": "b"}], "battery": ["a"], "ground": ["b"]}
    (tmp_path / "g.json").write_text(json.dumps(g))
    assert main(["transition", "--graph", str(tmp_path / "g.json"), "--q", "0", "--rho", "1", "--nu", "1",
                 "--delta", "1", "--out", str(tmp_path / "o")]) == 3


def test_currents_and_transition_outputs(tmp_path):
    assert main(["currents", "--graph", "lattice:4x3", "--out", str(tmp_path / "c")]) == 0
    for name in ("C.csv", "C_pos.csv", "C_neg.csv", "Omega.csv", "v.csv"):
        assert (tmp_path / "c" / name).exists()
    z = tmp_path / "z.csv"
    z.write_text("node_id,z\n" + "".join(f"r{r}c{c},{1 + r}\n" for r in range(4) for c in range(3)))
    assert main(["transition", "--graph", "lattice:4x3", "--q", "-1", "--rho", "2", "--nu", "0.5",
                 "--delta", "0.5", "--z", str(z), "--out", str(tmp_path / "t")]) == 0
    with open(tmp_path / "t" / "states.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 and float(rows[0]["z_before"]) == 1.0


def test_fit_resume_and_summarize(tmp_path):
    main(["simulate", "--graph", "lattice:4x3", "--steps", "4", "--seed", "2", "--censor", "0.2",
          "--out", str(tmp_path / "sim")])
    base = ["fit", "--graph", str(tmp_path / "sim" / "graph.json"), "--counts", str(tmp_path / "sim" / "counts.csv"),
            "--iterations", "300", "--seed", "5"]
    assert main(base + ["--out", str(tmp_path / "f1")]) == 0
    assert main(base + ["--out", str(tmp_path / "f2"), "--resume"]) == 0
    assert _files(tmp_path / "f1") == _files(tmp_path / "f2")
    assert not (tmp_path / "f1" / "chain.pkl").exists()
    assert main(["summarize", "--draws", str(tmp_path / "f1"), "--counts", str(tmp_path / "sim" / "counts.csv"),
                 "--out", str(tmp_path / "sum")]) == 0
    for name in ("average_latitude.csv", "flow.csv", "ess.csv"):
        with open(tmp_path / "sum" / name) as fh:
            assert len(list(csv.DictReader(fh))) > 0


def test_fit_resumes_from_checkpoint(tmp_path):
    from circuithmm import ingest
    from circuithmm.sampler import PriorSpec, Sampler, SamplerConfig
    main(["simulate", "--graph", "lattice:3x3", "--steps", "3", "--seed", "3", "--out", str(tmp_path / "sim")])
    counts = str(tmp_path / "sim" / "counts.csv")
    args = ["fit", "--graph", "lattice:3x3", "--counts", counts, "--iterations", "300", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "full")]) == 0
    spec = ingest.load_graph("lattice:3x3")
    obs = ingest.load_counts(counts, node_ids=spec.graph.node_ids)
    partial = Sampler(obs, spec.kernel(), PriorSpec(), SamplerConfig(n_iterations=300, burn_in=100, seed=1))
    for _ in range(150):
        partial.step()
    (tmp_path / "resumed").mkdir()
    partial.save(tmp_path / "resumed" / "chain.pkl")
    assert main(args + ["--out", str(tmp_path / "resumed"), "--resume"]) == 0
    assert _files(tmp_path / "full") == _files(tmp_path / "resumed")


def test_study_smoke(tmp_path):
    assert main(["study", "--replicates", "1", "--iterations", "200", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "coverage.csv") as fh:
        blocks = [r["block"] for r in csv.DictReader(fh)]
    assert blocks[:2] == ["z_observed", "z_censored"]


def test_demo_resistance_command(tmp_path):
    out = tmp_path / "demo.csv"
    assert main(["demo-resistance", "--rows", "8", "--cols", "4", "--blocked", "3-4:1-2", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 32 and sum(int(r["blocked"]) for r in rows) == 4
    assert main(["demo-resistance", "--blocked", "99:0", "--out", str(out)]) == 3

import json

import numpy as np
import pytest

from attnphd.cli import run_cli
from attnphd.ingest import write_ground_truth, write_pgm, write_tracks
from attnphd.model import BBox, ClassLabel, TrackRecord
from attnphd.rpfilter import ProposalTensor, write_tensor


@pytest.fixture
def scenario_spec(tmp_path):
    spec = {
        "frames": 25,
        "targets": [
            {"birth": 0, "death": 25, "box": [20, 30, 60, 70], "velocity": [2, 1]},
            {"birth": 3, "death": 25, "box": [200, 100, 230, 160], "velocity": [-1, 0]},
        ],
        "miss": 0.1, "clutter": 0.3, "noise": 0.5, "seed": 2,
    }
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec))
    return p


def test_evaluate_perfect_tracks(tmp_path, capsys):
    gt = {k: [(1, BBox(k, 0, k + 10, 10))] for k in range(5)}
    write_ground_truth(gt, tmp_path / "gt.csv")
    write_tracks([TrackRecord(k, 4, ClassLabel.CAR, b, 1.0) for k in gt for _, b in gt[k]], tmp_path / "t.csv")
    assert run_cli(["evaluate", str(tmp_path / "t.csv"), str(tmp_path / "gt.csv"), "-o", str(tmp_path / "r.txt")]) == 0
    out = capsys.readouterr().out
    assert "MOTA=1.0000" in out and "IDs=0 FM=0" in out
    assert "mota = 1.000000" in (tmp_path / "r.txt").read_text()


def test_filter_rps_saturated_attention(tmp_path, capsys, rng):
    data = rng.random((4 * 5, 12, 5))
    data[:, :, 1:] = 0.0
    write_tensor(tmp_path / "p.rpt", ProposalTensor(4, 5, data))
    write_pgm(tmp_path / "a.pgm", np.full((4, 5), 255, np.uint8))
    assert run_cli(["filter-rps", str(tmp_path / "p.rpt"), str(tmp_path / "a.pgm"), "-n", "1"]) == 0
    assert "RP fraction: 8.33% (20 of 240)" in capsys.readouterr().out


def test_bad_input_exits_2(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("0,1,Car,5,5,1,1,0.5\n")
    (tmp_path / "gt.csv").write_text("")
    assert run_cli(["evaluate", str(tmp_path / "t.csv"), str(tmp_path / "gt.csv")]) == 2
    assert "error" in capsys.readouterr().err
    assert run_cli(["track", str(tmp_path / "missing.txt")]) == 2


def test_synth_then_track_is_deterministic(tmp_path, scenario_spec, capsys):
    assert run_cli(["synth", str(scenario_spec), "--out", str(tmp_path / "seq")]) == 0
    manifest = tmp_path / "seq" / "manifest.txt"
    outs = []
    for i in range(2):
        o = tmp_path / f"tracks{i}.csv"
        assert run_cli(["track", str(manifest), "--seed", "7", "-o", str(o)]) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1] and len(outs[0]) > 100
    assert run_cli(["evaluate", str(tmp_path / "tracks0.csv"), str(tmp_path / "seq" / "gt.csv")]) == 0
    assert "MOTA=" in capsys.readouterr().out


def test_track_with_config_and_no_attention(tmp_path, scenario_spec):
    run_cli(["synth", str(scenario_spec), "--out", str(tmp_path / "seq")])
    cfg = tmp_path / "tracker.cfg"
    cfg.write_text("particles = 30\nrefine = false\n")
    out = tmp_path / "t.csv"
    rc = run_cli(["track", str(tmp_path / "seq" / "manifest.txt"), "--config", str(cfg),
                  "--attention-kind", "none", "-o", str(out)])
    assert rc == 0 and out.exists()


def test_bad_config_exits_2(tmp_path, scenario_spec):
    run_cli(["synth", str(scenario_spec), "--out", str(tmp_path / "seq")])
    cfg = tmp_path / "tracker.cfg"
    cfg.write_text("particles = lots\n")
    assert run_cli(["track", str(tmp_path / "seq" / "manifest.txt"), "--config", str(cfg)]) == 2

import hashlib
import json

import numpy as np
import pytest

from vistrack.cli import main
from vistrack.embedding import FeatureMap, FeatureMapStack
from vistrack.io import (
    DetectionRecord,
    FeatureArchive,
    FormatError,
    TrackRecord,
    dumps,
    load_tracker_config,
    parse_detections,
    parse_tracks,
    write_feature_archive,
    write_jsonl,
)
from vistrack.masks import encode_rle
from vistrack.tracker import TrackerConfig


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def small_scenario(tmp_path, **extra):
    cfg = dict(n_identities=3, n_frames=12, width=96, height=80, size_range=(10.0, 16.0), e=16, **extra)
    path = tmp_path / "scn.json"
    path.write_text(json.dumps(cfg))
    return path


def test_records_round_trip(tmp_path):
    m = encode_rle(np.eye(4, dtype=bool))
    d = DetectionRecord(3, m, 0.75, (0.1, 1 / 3))
    t = TrackRecord(3, 7, m, 0.75)
    assert DetectionRecord.from_json(json.loads(dumps(d.to_json()))) == d
    assert TrackRecord.from_json(json.loads(dumps(t.to_json()))) == t
    with pytest.raises(ValueError):
        DetectionRecord(0, m, 1.0)


def test_float_serialization_round_trips_exactly():
    xs = [0.1, 1 / 3, 2.0**-1074, 1.7976931348623157e308, 5e-324]
    assert json.loads(dumps(xs)) == xs
    with pytest.raises(ValueError):
        dumps([float("nan")])


def test_malformed_line_is_named(tmp_path):
    p = tmp_path / "d.jsonl"
    good = DetectionRecord(0, encode_rle(np.ones((2, 2), dtype=bool)), 1.0, (1.0,)).to_json()
    p.write_text(json.dumps(good) + "\n\n" + '{"frame": 1, "mask": {"w": 2}}\n')
    with pytest.raises(FormatError) as err:
        parse_detections(p)
    assert err.value.line == 3


def test_duplicate_track_rows_rejected(tmp_path):
    m = encode_rle(np.ones((2, 2), dtype=bool))
    p = tmp_path / "t.jsonl"
    write_jsonl(p, [TrackRecord(0, 1, m, 1.0).to_json()] * 2)
    with pytest.raises(FormatError, match="duplicate"):
        parse_tracks(p)


def test_config_file_and_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"tau": 5, "iou_mode": "bbox"}))
    cfg = load_tracker_config(p, use_kalman=False)
    assert (cfg.tau, cfg.iou_mode, cfg.use_kalman) == (5, "bbox", False)
    p.write_text(json.dumps({"gamma": "x", "nope": 1}))
    with pytest.raises(ValueError, match="nope"):
        load_tracker_config(p)


def test_default_config_serializes_paper_values():
    d = json.loads(dumps(TrackerConfig().to_dict()))
    assert (d["n_max"], d["t_max"], d["tau"], d["e"]) == (50, 10, 30, 352)


def test_feature_archive_round_trip_and_bytes(tmp_path, rng):
    stacks = [FeatureMapStack((FeatureMap(rng.standard_normal((2, 4, 5)), 1),
                               FeatureMap(rng.standard_normal((3, 2, 3)), 2))) for _ in range(3)]
    write_feature_archive(tmp_path / "a.npz", stacks)
    write_feature_archive(tmp_path / "b.npz", stacks)
    assert digest(tmp_path / "a.npz") == digest(tmp_path / "b.npz")
    arch = FeatureArchive(tmp_path / "a.npz")
    assert len(arch) == 3
    for t, s in enumerate(stacks):
        back = arch.stack(t)
        for m0, m1 in zip(s.maps, back.maps):
            assert m0.stride == m1.stride and np.array_equal(m0.values, m1.values)


def test_pipeline_and_determinism(tmp_path, capsys):
    scn = small_scenario(tmp_path)
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(capsys, "simulate", "--config", scn, "--seed", 7, "--out", out)[0] == 0
        assert run(capsys, "track", "--in", out / "detections.jsonl", "--out", out / "tracks.jsonl",
                   "--config", _cfg(tmp_path, e=16))[0] == 0
        code, text, _ = run(capsys, "eval", "--gt", out / "gt.jsonl", "--pred", out / "tracks.jsonl",
                            "--out", out / "report.json")
        assert code == 0
        summary = json.loads(text)
        assert summary["hota"] == 1.0 and summary["ids"] == 0
        digests.append([digest(out / f) for f in ("gt.jsonl", "detections.jsonl", "tracks.jsonl", "report.json")])
    assert digests[0] == digests[1]
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(report["per_alpha"]) == 19


def _cfg(tmp_path, **kw):
    p = tmp_path / "tracker.json"
    p.write_text(json.dumps(kw))
    return p


def test_emitted_files_reparse(tmp_path, capsys):
    out = tmp_path / "s"
    run(capsys, "simulate", "--config", small_scenario(tmp_path, embedding_noise=0.1), "--out", out)
    records, n = parse_detections(out / "detections.jsonl")
    again = tmp_path / "again.jsonl"
    write_jsonl(again, [r.to_json() for r in records])
    assert again.read_bytes() == (out / "detections.jsonl").read_bytes()
    assert n == 12


def test_feature_map_pipeline(tmp_path, capsys):
    out = tmp_path / "fx"
    assert run(capsys, "simulate", "--preset", "fixture", "--out", out)[0] == 0
    assert (out / "features.npz").exists()
    first = json.loads((out / "detections.jsonl").read_text().splitlines()[0])
    assert "feature_maps" in first and "embedding" not in first
    for sampling in ("centroid_max_contour", "bbox_center"):
        code, text, err = run(capsys, "track", "--in", out / "detections.jsonl", "--out", out / f"{sampling}.jsonl",
                              "--config", _cfg(tmp_path, e=32), "--sampling", sampling, "--lenient")
        assert code == 0, err


def test_ablation_flags(tmp_path, capsys):
    out = tmp_path / "s"
    run(capsys, "simulate", "--config", small_scenario(tmp_path), "--out", out)
    code, _, err = run(capsys, "track", "--in", out / "detections.jsonl", "--out", out / "t.jsonl",
                       "--config", _cfg(tmp_path, e=16), "--iou", "bbox", "--no-kalman", "--strict")
    assert code == 0, err


def error_of(err):
    obj = json.loads(err.strip().splitlines()[-1])
    return obj["error"]


def test_errors_are_machine_readable(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"frame": 0}\nnot json\n')
    code, _, err = run(capsys, "track", "--in", bad, "--out", tmp_path / "x.jsonl")
    assert code != 0
    e = error_of(err)
    assert e["type"] == "format" and e["line"] == 2

    cfg = _cfg(tmp_path, theta_iou=2.0)
    good = tmp_path / "s"
    run(capsys, "simulate", "--config", small_scenario(tmp_path), "--out", good)
    code, _, err = run(capsys, "track", "--in", good / "detections.jsonl", "--out", tmp_path / "x.jsonl",
                       "--config", cfg)
    assert code != 0
    e = error_of(err)
    assert e["type"] == "config" and e["key"] == "theta_iou"

    code, _, err = run(capsys, "track", "--bogus")
    assert code == 2 and error_of(err)["type"] == "usage"

    code, _, err = run(capsys, "eval", "--gt", tmp_path / "missing.jsonl", "--pred", tmp_path / "missing.jsonl")
    assert code != 0 and error_of(err)["type"] == "io"


def test_losses_command(tmp_path, capsys):
    pair = tmp_path / "pair.json"
    gt = tmp_path / "gt.json"
    g = np.eye(2)
    pair.write_text(json.dumps({"p_fw": np.vstack([g, [0, 0]]).tolist(),
                                "p_rv": np.hstack([g, [[0], [0]]]).tolist()}))
    gt.write_text(json.dumps({"pairs": [[0, 0], [1, 1]], "n_prev": 2, "n_cur": 2}))
    code, text, _ = run(capsys, "losses", "--in", pair, "--gt", gt, "--out", tmp_path / "l.json")
    assert code == 0
    rep = json.loads(text)
    assert rep == {"l_fw": 0.0, "l_rv": 0.0, "l_nm": 0.0, "l_match": 0.0}

    emb = tmp_path / "emb.json"
    emb.write_text(json.dumps({"e_prev": [[1, 0, 0], [0, 1, 0]], "e_cur": [[0, 1, 0], [1, 0, 0]],
                               "frame_prev": 0, "frame_cur": 12}))
    code, _, err = run(capsys, "losses", "--in", emb, "--gt", gt, "--config", _cfg(tmp_path, e=3, n_max=4))
    assert code != 0 and "t_max" in error_of(err)["message"]
    emb.write_text(json.dumps({"e_prev": [[1, 0, 0], [0, 1, 0]], "e_cur": [[0, 1, 0], [1, 0, 0]],
                               "frame_prev": 0, "frame_cur": 2,
                               "combined": {"l_detseg_prev": 1.0, "l_detseg_cur": 1.0}}))
    gt.write_text(json.dumps({"pairs": [[0, 1], [1, 0]]}))
    code, text, _ = run(capsys, "losses", "--in", emb, "--gt", gt, "--config", _cfg(tmp_path, e=3, n_max=4))
    rep = json.loads(text)
    assert code == 0 and rep["l_fw"] < 0.1 and "l_total" in rep

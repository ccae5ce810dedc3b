"""Command line: simulate -> track -> eval, plus association losses on frame pairs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from vistrack.affinity import (
    SCORERS,
    CombinedLossInput,
    GroundTruthAssociation,
    associate,
    association_losses,
    combined_loss,
)
from vistrack.embedding import build_embedding_matrix, embed_mask
from vistrack.io import (
    FeatureArchive,
    FormatError,
    TrackRecord,
    atomic_write_text,
    detection_records,
    dumps,
    load_tracker_config,
    parse_detections,
    parse_tracks,
    read_json,
    track_records,
    tracks_to_sequence,
    write_feature_archive,
    write_jsonl,
)
from vistrack.metrics import evaluate
from vistrack.simulator import (
    ScenarioConfig,
    center_coincidence_fixture,
    clean_scenario_config,
    coincidence_scenario,
    deformation_scenario,
    generate,
)
from vistrack.tracker import SAMPLING_STRATEGIES, Detection, TrackerConfig, track_sequence

log = logging.getLogger(__name__)

PRESETS = ("default", "clean", "coincidence", "deformation", "fixture")


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# ---------------------------------------------------------------------------
# simulate


def _scenario(args):
    seed = 0 if args.seed is None else args.seed
    if args.preset == "fixture":
        return center_coincidence_fixture()
    if args.preset == "coincidence":
        return coincidence_scenario(seed)
    if args.preset == "deformation":
        return deformation_scenario(seed)
    if args.config is not None:
        d = read_json(args.config)
        if not isinstance(d, dict):
            raise FormatError("scenario config must be a JSON object", args.config)
        if args.seed is not None:
            d["seed"] = args.seed
        return generate(ScenarioConfig.from_json(d))
    if args.preset == "clean":
        return generate(clean_scenario_config(seed))
    return generate(ScenarioConfig(seed=seed))


def cmd_simulate(args) -> dict:
    scn = _scenario(args)
    out = Path(args.out)
    archive = None
    if scn.feature_maps is not None:
        archive = "features.npz"
        write_feature_archive(out / archive, scn.feature_maps)
    gt = [TrackRecord(t, gid, m, 1.0).to_json() for t, frame in enumerate(scn.gt.frames) for gid, m in frame]
    write_jsonl(out / "gt.jsonl", gt)
    write_jsonl(out / "detections.jsonl", detection_records(scn.detections, archive))
    meta = {"n_frames": scn.config.n_frames, "preset": args.preset, "scenario": scn.config.to_json()}
    atomic_write_text(out / "scenario.json", dumps(meta, indent=2) + "\n")
    return {"out": str(out), "n_frames": scn.config.n_frames, "detections": sum(map(len, scn.detections))}


# ---------------------------------------------------------------------------
# track


def _tracker_config(args) -> TrackerConfig:
    overrides = {}
    if args.strict is not None:
        overrides["strict"] = args.strict
    if args.sampling is not None:
        overrides["sampling_strategy"] = args.sampling
    if args.iou is not None:
        overrides["iou_mode"] = args.iou
    if args.no_kalman:
        overrides["use_kalman"] = False
    return load_tracker_config(args.config, **overrides)


def _frames_from_records(path, records, n_frames: int, cfg: TrackerConfig) -> list[list[Detection]]:
    archives: dict[str, FeatureArchive] = {}
    frames: list[list[Detection]] = [[] for _ in range(n_frames)]
    base = Path(path).parent
    for rec in records:
        emb = rec.embedding
        if emb is None:
            ref = rec.feature_maps
            if "path" not in ref or "frame" not in ref:
                raise FormatError("feature_maps reference needs 'path' and 'frame'", str(path))
            key = str(base / ref["path"])
            if key not in archives:
                archives[key] = FeatureArchive(key)
            stack = archives[key].stack(int(ref["frame"]))
            emb = embed_mask(stack, rec.mask, cfg.sampling_strategy)
        emb = np.asarray(emb, dtype=np.float64)
        if emb.size != cfg.e:
            raise CliError("config", f"config key 'e' out of range: detections carry {emb.size} channels, "
                                     f"config says {cfg.e}", key="e")
        frames[rec.frame].append(Detection(rec.frame, rec.mask, rec.score, emb))
    return frames


def cmd_track(args) -> dict:
    cfg = _tracker_config(args)
    records, n_frames = parse_detections(args.input, args.frames)
    frames = _frames_from_records(args.input, records, n_frames, cfg)
    reports = track_sequence(frames, cfg)
    write_jsonl(args.out, track_records(frames, reports))
    n_ids = len({tid for r in reports for tid in r.assignments.values()})
    return {"out": args.out, "frames": n_frames, "tracks": n_ids}


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> dict:
    gt = parse_tracks(args.gt)
    pred = parse_tracks(args.pred)
    n_frames = args.frames
    if n_frames is None:
        n_frames = max([r.frame for r in (*gt, *pred)], default=-1) + 1
    report = evaluate(tracks_to_sequence(gt, n_frames), tracks_to_sequence(pred, n_frames))
    text = dumps(report.to_json(), indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    return {"hota": report.hota, "det_a": report.det_a, "ass_a": report.ass_a, "ids": report.ids}


# ---------------------------------------------------------------------------
# losses


def _gt_association(d: dict, n_max: int) -> GroundTruthAssociation:
    n_prev = int(d.get("n_prev", n_max))
    n_cur = int(d.get("n_cur", n_max))
    if "g" in d:
        return GroundTruthAssociation(np.asarray(d["g"], dtype=np.float64), n_prev, n_cur)
    if "pairs" not in d:
        raise FormatError("ground-truth file needs 'pairs' or 'g'")
    return GroundTruthAssociation.from_pairs([tuple(p) for p in d["pairs"]], n_max, n_prev, n_cur)


def cmd_losses(args) -> dict:
    pair = read_json(args.input)
    gt_obj = read_json(args.gt)
    if not isinstance(pair, dict) or not isinstance(gt_obj, dict):
        raise FormatError("pair and ground-truth files must be JSON objects")
    if "p_fw" in pair:
        p_fw = np.asarray(pair["p_fw"], dtype=np.float64)
        p_rv = np.asarray(pair["p_rv"], dtype=np.float64)
        n_max = p_rv.shape[0]
    else:
        cfg = load_tracker_config(args.config)
        try:
            gap = int(pair["frame_cur"]) - int(pair["frame_prev"])
            e_prev, e_cur = pair["e_prev"], pair["e_cur"]
        except KeyError as exc:
            raise FormatError(f"pair file missing {exc.args[0]!r}", args.input) from None
        if not 1 <= gap <= cfg.t_max:
            raise CliError("input", f"frame gap {gap} outside 1..t_max={cfg.t_max}")
        n_max = cfg.n_max
        a = build_embedding_matrix(e_prev, n_max, cfg.e, strict=True)
        b = build_embedding_matrix(e_cur, n_max, cfg.e, strict=True)
        res = associate(a, b, cfg.gamma, SCORERS[cfg.scorer], cfg.affinity_scale)
        p_fw, p_rv = res.p_fw, res.p_rv
        gt_obj = {"n_prev": a.count, "n_cur": b.count, **gt_obj}
    report = association_losses(p_fw, p_rv, _gt_association(gt_obj, n_max))
    out = report.to_json()
    if "combined" in pair:
        c = pair["combined"]
        out["l_total"] = combined_loss(CombinedLossInput(
            float(c["l_detseg_prev"]), float(c["l_detseg_cur"]), report.l_match,
            float(c.get("s_i", 0.0)), float(c.get("s_j", 0.0))))
    if args.out:
        atomic_write_text(args.out, dumps(out, indent=2) + "\n")
    return out


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vistrack", description="Mask tracking by appearance, motion and mask IOU.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("--config", help="scenario config JSON")
    s.add_argument("--preset", choices=PRESETS, default="default")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="track detections from a JSONL file")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="tracker config JSON")
    t.add_argument("--seed", type=int, help="accepted for pipeline symmetry; tracking is deterministic")
    t.add_argument("--frames", type=int, help="frame count, if trailing frames are empty")
    mode = t.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=None)
    mode.add_argument("--lenient", dest="strict", action="store_false")
    t.add_argument("--sampling", choices=SAMPLING_STRATEGIES)
    t.add_argument("--iou", choices=("mask", "bbox", "none"))
    t.add_argument("--no-kalman", action="store_true")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score predicted tracks against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out")
    e.add_argument("--frames", type=int)
    e.set_defaults(func=cmd_eval)

    lo = sub.add_parser("losses", help="association losses for one frame pair")
    lo.add_argument("--in", dest="input", required=True)
    lo.add_argument("--gt", required=True)
    lo.add_argument("--config")
    lo.add_argument("--out")
    lo.set_defaults(func=cmd_losses)
    return p


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message, **extra}}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc.kind, str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), 1, **exc.extra)
    except FormatError as exc:
        extra = {k: v for k, v in (("path", exc.path), ("line", exc.line)) if v is not None}
        return _fail("format", str(exc), 1, **extra)
    except FileNotFoundError as exc:
        return _fail("io", f"{exc.strerror}: {exc.filename}", 1)
    except (ValueError, KeyError, TypeError) as exc:
        msg = str(exc)
        extra = {}
        if msg.startswith("config key ") or msg.startswith("unknown config key "):
            extra["key"] = msg.split("'")[1]
            return _fail("config", msg, 1, **extra)
        return _fail("input", msg, 1)
    sys.stdout.write(dumps(summary) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

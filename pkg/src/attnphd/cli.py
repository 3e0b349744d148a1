"""Command-line entry point: ``attnphd {track,filter-rps,evaluate,synth,convert-detrac}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import ingest, metrics, rpfilter, synth
from .errors import ArtifactError
from .phdtracker import PHDTracker, TrackerConfig, load_config

log = logging.getLogger("attnphd")


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def cmd_track(args) -> int:
    manifest = ingest.read_manifest(args.manifest)
    cfg = load_config(args.config) if args.config else TrackerConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    kind = args.attention_kind
    if kind == "none":
        cfg = replace(cfg, use_attention=False)
    observations = ingest.load_sequence(manifest, kind)
    tracker = PHDTracker(cfg)
    records = []
    t0 = time.perf_counter()
    for obs in observations:
        records.extend(tracker.step_frame(obs).records)
    log.info("tracked %d frames in %.2fs", len(observations), time.perf_counter() - t0)
    out = args.output or Path(args.manifest).with_name("tracks.csv")
    ingest.write_tracks(records, out)
    print(f"wrote {len(records)} track records for {len(observations)} frames to {out}")
    print(f"terminated tracks: {len(tracker.terminated)}")
    return 0


def cmd_filter_rps(args) -> int:
    tensor = rpfilter.read_tensor(args.proposals)
    grid = ingest.load_attention(args.attention, "objectness")
    anchors = rpfilter.AnchorSpec(_floats(args.sizes), _floats(args.ratios), args.stride)
    frame = None
    if (grid.height, grid.width) != (tensor.h, tensor.w):
        frame = (grid.width, grid.height)
        grid = rpfilter.downsample_attention(grid, tensor.h, tensor.w)
    if args.combine:
        props = rpfilter.combine_filters(tensor, grid, anchors, frame, tau=args.tau)
    else:
        cond = rpfilter.FilterCondition(args.tau, rpfilter.Direction(args.direction), args.n)
        props = rpfilter.filter_proposals(tensor, grid, cond, anchors, frame)
    frac = rpfilter.proposal_fraction(len(props), tensor)
    print(f"RP fraction: {100 * frac:.2f}% ({len(props)} of {tensor.size})")
    if args.nms is not None:
        props = rpfilter.nms(props, args.nms)
        print(f"after NMS: {len(props)}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write("row,col,anchor,objectness,left,top,right,bottom\n")
            for p in props:
                fh.write(",".join(str(v) for v in (*p.source_location, p.anchor_index, repr(p.objectness),
                                                    *map(repr, p.bbox.as_tuple()))) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    records = ingest.parse_tracks(args.tracks)
    gt = ingest.parse_ground_truth(args.gt)
    hyp = ingest.tracks_by_frame(records)
    frames = metrics.frames_from_records(gt, hyp, args.frames)
    report = metrics.evaluate(frames, args.iou_min)
    sys.stdout.write(report.to_table())
    print(f"MOTA={report.mota:.4f} MOTP={report.motp:.4f} IDs={report.id_switches} FM={report.fragmentations}")
    if args.output:
        Path(args.output).write_text(report.to_key_value(), encoding="utf-8")
    return 0


def cmd_synth(args) -> int:
    spec = synth.ScenarioSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec.seed = args.seed
    scenario = synth.generate(spec)
    path = synth.write_scenario(scenario, args.out, args.name)
    print(path)
    return 0


def cmd_convert_detrac(args) -> int:
    kept = ingest.convert_detrac(args.xml, args.out, args.stride)
    print(f"wrote {kept} frames to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attnphd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="run the tracker over a sequence manifest")
    t.add_argument("manifest")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--attention-kind", choices=["objectness", "subjectness", "none"])
    t.add_argument("-o", "--output")
    t.set_defaults(func=cmd_track)

    f = sub.add_parser("filter-rps", help="attention-guided proposal filtering")
    f.add_argument("proposals", help="RPT1 proposal tensor")
    f.add_argument("attention", help="PGM/PNG map or RPT1 grid")
    f.add_argument("-n", type=int, default=1)
    f.add_argument("--tau", type=float, default=rpfilter.DEFAULT_TAU)
    f.add_argument("--direction", choices=[d.value for d in rpfilter.Direction], default="at_least")
    f.add_argument("--combine", action="store_true", help="training-time union of top-4 above / top-2 below tau")
    f.add_argument("--sizes", default="4,8,16,32")
    f.add_argument("--ratios", default="0.5,1,2")
    f.add_argument("--stride", type=float, default=16.0)
    f.add_argument("--nms", type=float, metavar="IOU")
    f.add_argument("-o", "--output")
    f.set_defaults(func=cmd_filter_rps)

    e = sub.add_parser("evaluate", help="CLEAR-MOT metrics of a track file")
    e.add_argument("tracks")
    e.add_argument("gt", help="ground-truth CSV or KITTI label file")
    e.add_argument("--iou-min", type=float, default=0.5)
    e.add_argument("--frames", type=int)
    e.add_argument("-o", "--output", help="write key = value report")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a synthetic sequence")
    s.add_argument("spec", help="scenario JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--name", default="synth")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("convert-detrac", help="DETRAC XML to ground-truth CSV")
    d.add_argument("xml")
    d.add_argument("--out", required=True)
    d.add_argument("--stride", type=int, default=1)
    d.set_defaults(func=cmd_convert_detrac)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ArtifactError, OSError, ValueError) as exc:
        print(f"attnphd {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

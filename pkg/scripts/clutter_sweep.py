"""CLEAR-MOT scores of the tracker over a grid of miss and clutter rates."""
import argparse
import itertools
from dataclasses import replace

from attnphd import PHDTracker, TrackerConfig
from attnphd.ingest import tracks_by_frame
from attnphd.metrics import evaluate, frames_from_records
from attnphd.synth import ScenarioSpec, TargetSpec, generate

TARGETS = [
    TargetSpec(0, 80, (10, 20, 50, 60), (2.0, 0.5)),
    TargetSpec(10, 100, (200, 150, 240, 200), (-1.5, -0.5)),
    TargetSpec(0, 100, (100, 40, 130, 100), (0.5, 1.0)),
    TargetSpec(30, 100, (260, 20, 290, 70), (-1.0, 1.0)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--misses", default="0,0.1,0.2")
    ap.add_argument("--clutter", default="0,1,2")
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    misses = [float(v) for v in args.misses.split(",")]
    clutter = [float(v) for v in args.clutter.split(",")]

    print(f"{'miss':>5} {'clutter':>7} {'attn':>5} {'MOTA':>7} {'MOTP':>6} {'IDs':>5} {'FM':>5} {'FAR':>6}")
    for miss, lam in itertools.product(misses, clutter):
        for attention in ("perfect", "none"):
            totals = []
            for seed in range(args.seeds):
                spec = ScenarioSpec(frames=100, targets=TARGETS, miss=miss, clutter=lam, noise=args.noise,
                                    attention=attention, seed=seed)
                sc = generate(spec)
                cfg = TrackerConfig(seed=seed)
                if attention == "none":
                    cfg = replace(cfg, use_attention=False, refine=False)
                tracker = PHDTracker(cfg)
                recs = [r for o in sc.observations for r in tracker.step_frame(o).records]
                totals.append(evaluate(frames_from_records(sc.ground_truth, tracks_by_frame(recs), spec.frames)))
            k = len(totals)
            print(f"{miss:>5.2f} {lam:>7.1f} {attention[:4]:>5} "
                  f"{sum(r.mota for r in totals) / k:>7.3f} {sum(r.motp for r in totals) / k:>6.3f} "
                  f"{sum(r.id_switches for r in totals) / k:>5.1f} {sum(r.fragmentations for r in totals) / k:>5.1f} "
                  f"{sum(r.far for r in totals) / k:>6.1f}")


if __name__ == "__main__":
    main()

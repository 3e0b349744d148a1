"""Share of region proposals kept by attention-guided top-n filtering.

Builds a random proposal tensor on an H x W feature grid with 12 anchors per
location, activates a given share of locations in the attention map and
reports the kept fraction for each n, with and without the combined
above/below-threshold rule.
"""
import argparse
import time

import numpy as np

from attnphd.model import AttentionGrid
from attnphd.rpfilter import AnchorSpec, Direction, FilterCondition, ProposalTensor, combine_filters, filter_proposals, proposal_fraction


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--shares", default="0.103,0.109,0.127")
    ap.add_argument("--n", default="1,2,4")
    ap.add_argument("--tau", type=float, default=0.4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    anchors = AnchorSpec()
    h = w = args.size
    data = np.zeros((h * w, anchors.num_anchors, 5))
    data[:, :, 0] = rng.random(data.shape[:2])
    tensor = ProposalTensor(h, w, data)

    print(f"{'active':>8} {'n':>3} {'kept':>7} {'fraction':>9} {'time':>7}")
    for share in (float(s) for s in args.shares.split(",")):
        count = round(share * h * w)
        vals = np.zeros(h * w)
        vals[rng.choice(h * w, count, replace=False)] = 1.0
        grid = AttentionGrid(vals.reshape(h, w))
        for n in (int(v) for v in args.n.split(",")):
            t0 = time.perf_counter()
            props = filter_proposals(tensor, grid, FilterCondition(args.tau, Direction.AT_LEAST, n), anchors)
            dt = time.perf_counter() - t0
            frac = proposal_fraction(len(props), tensor)
            print(f"{count / (h * w):>8.2%} {n:>3} {len(props):>7} {frac:>9.2%} {dt * 1e3:>5.1f}ms")
        props = combine_filters(tensor, grid, anchors, None, tau=args.tau)
        print(f"{count / (h * w):>8.2%} {'4+2':>3} {len(props):>7} {proposal_fraction(len(props), tensor):>9.2%}")


if __name__ == "__main__":
    main()

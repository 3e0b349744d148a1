"""Independent reference implementations used by the tests.

Deliberately naive: plain loops, no shared code with the paths they check
beyond the box type.
"""
import itertools
import math


def box_iou(a, b):
    l, t = max(a[0], b[0]), max(a[1], b[1])
    r, btm = min(a[2], b[2]), min(a[3], b[3])
    if r <= l or btm <= t:
        return 0.0
    inter = (r - l) * (btm - t)
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def rp_select(scores, attention, tau, at_least, n):
    """Set of (location, anchor) pairs kept by attention-guided top-n filtering.

    ``scores`` is a list of per-location anchor-score lists, ``attention`` the
    flat attention list.
    """
    keep = set()
    for loc, row in enumerate(scores):
        v = attention[loc]
        ok = v >= tau if at_least else v < tau
        if not ok:
            continue
        for j, s in enumerate(row):
            rank = sum(1 for k, o in enumerate(row) if o > s or (o == s and k < j))
            if rank < n:
                keep.add((loc, j))
    return keep


def nms_reference(items, thresh):
    """items: list of (score, box); returns kept indices, highest score first."""
    order = sorted(range(len(items)), key=lambda i: (-items[i][0], i))
    kept = []
    for i in order:
        if all(box_iou(items[i][1], items[k][1]) < thresh for k in kept):
            kept.append(i)
    return kept


def min_assignment_cost(costs):
    """Exhaustive minimum over all maximal matchings (exact sum via fsum)."""
    rows = len(costs)
    cols = len(costs[0]) if rows else 0
    if not rows or not cols:
        return 0.0
    best = math.inf
    if rows <= cols:
        for perm in itertools.permutations(range(cols), rows):
            best = min(best, math.fsum(costs[r][perm[r]] for r in range(rows)))
    else:
        for perm in itertools.permutations(range(rows), cols):
            best = min(best, math.fsum(costs[perm[c]][c] for c in range(cols)))
    return best


def best_iou_matching(gt, hyp, iou_min):
    """Max-cardinality, then min total (1 - iou), matching by enumeration.

    gt, hyp: lists of boxes. Returns a set of (gt_index, hyp_index).
    """
    best_key, best = None, set()
    n, m = len(gt), len(hyp)
    for perm in itertools.permutations(range(m), min(n, m)) if n <= m else []:
        pairs = {(i, perm[i]) for i in range(n)}
        best_key, best = _score(pairs, gt, hyp, iou_min, best_key, best)
    if n > m:
        for perm in itertools.permutations(range(n), m):
            pairs = {(perm[j], j) for j in range(m)}
            best_key, best = _score(pairs, gt, hyp, iou_min, best_key, best)
    return best


def _score(pairs, gt, hyp, iou_min, best_key, best):
    valid = {(i, j) for i, j in pairs if box_iou(gt[i], hyp[j]) >= iou_min}
    key = (-len(valid), math.fsum(1 - box_iou(gt[i], hyp[j]) for i, j in valid))
    if best_key is None or key < best_key:
        return key, valid
    return best_key, best


def block_max(values, h, w):
    """Block-max pooling of a nested-list image onto an h x w grid."""
    H, W = len(values), len(values[0])
    out = []
    for i in range(h):
        row = []
        for j in range(w):
            r0, r1 = i * H // h, (i + 1) * H // h
            c0, c1 = j * W // w, (j + 1) * W // w
            row.append(max(values[r][c] for r in range(r0, r1) for c in range(c0, c1)))
        out.append(row)
    return out


def scalar_kalman(x0, p0, q, r, zs):
    """Hand-run 1-D random-walk Kalman recursion; returns [(x, p)] per step."""
    x, p, out = x0, p0, []
    for z in zs:
        p = p + q
        k = p / (p + r)
        x = x + k * (z - x)
        p = (1 - k) * p
        out.append((x, p))
    return out

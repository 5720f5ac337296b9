"""Brute-force reference implementations used only by the tests.

They deliberately share no code with the package beyond the plain value
types, so agreement means something.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def box_iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


# --- weighted boxes fusion --------------------------------------------------


def set_partitions(n):
    """All restricted-growth strings of length n (one per set partition)."""
    if n == 0:
        yield ()
        return

    def rec(prefix, m):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for b in range(m + 1):
            yield from rec(prefix + [b], max(m, b + 1))

    yield from rec([0], 1)


def _weighted_mean(items):
    tot = sum(s for s, _ in items)
    if tot <= 0:
        return tuple(sum(b[i] for _, b in items) / len(items) for i in range(4))
    return tuple(sum(s * b[i] for s, b in items) / tot for i in range(4))


def wbf_oracle(per_model, iou_thr=0.55, skip_thr=0.0, weights=None, conf_type="avg"):
    """Try every partition of the pooled detections; keep the single one in
    which every detection sits where the sequential rule would have put it.

    Returns a sorted list of (label, (x1, y1, x2, y2), score).
    """
    n = len(per_model)
    weights = weights or [1.0] * n
    wmax = max(weights)
    pool = []
    for w, dets in zip(weights, per_model):
        for d in dets:
            if d.score >= skip_thr:
                pool.append((d.score * w / wmax, d))
    pool.sort(key=lambda sd: (-sd[0], sd[1].label, *sd[1].box, sd[1].model_id))

    valid = []
    for part in set_partitions(len(pool)):
        ok = True
        for k, (s, d) in enumerate(pool):
            blocks = {}
            for j in range(k):
                blocks.setdefault(part[j], []).append(pool[j])
            cands = []
            for blk, members in blocks.items():
                if members[0][1].label != d.label:
                    continue
                v = box_iou(_weighted_mean([(ms, md.box) for ms, md in members]), d.box)
                if v >= iou_thr:
                    cands.append((v, min(pool.index(m) for m in members), blk))
            if part[k] in blocks:
                if blocks[part[k]][0][1].label != d.label or not cands:
                    ok = False
                    break
                best = max(cands, key=lambda c: (c[0], -c[1]))
                if best[2] != part[k]:
                    ok = False
                    break
            elif cands:
                ok = False
                break
        if ok:
            valid.append(part)
    assert len(valid) == 1, f"expected exactly one consistent partition, found {len(valid)}"

    part = valid[0]
    out = []
    for blk in sorted(set(part)):
        members = [pool[i] for i in range(len(pool)) if part[i] == blk]
        scores = [s for s, _ in members]
        t = len(members)
        conf = max(scores) if conf_type == "max" else sum(scores) / t
        conf = conf * min(t, n) / n
        out.append((members[0][1].label, _weighted_mean([(s, d.box) for s, d in members]), conf))
    return sorted(out, key=lambda r: (-r[2], r[0], r[1]))


# --- average precision ------------------------------------------------------

THRESHOLDS = [Fraction(50 + 5 * i, 100) for i in range(10)]


def best_assignment(dets, truths, thr):
    """Lexicographically best matching over every partial injective assignment.

    ``dets`` are in descending score order; the assignment vector is compared
    on the IoU each detection receives (unmatched = -1), first detection first.
    """
    options = []
    for d in dets:
        opts = [None] + [j for j, t in enumerate(truths) if box_iou(d, t) >= thr]
        options.append(opts)
    best, best_vec = None, None
    for combo in itertools.product(*options):
        used = [j for j in combo if j is not None]
        if len(used) != len(set(used)):
            continue
        vec = tuple(-1.0 if j is None else box_iou(d, truths[j]) for d, j in zip(dets, combo))
        if best_vec is None or vec > best_vec:
            best, best_vec = combo, vec
    return list(best)


def ap_from_flags(flags, n_truths):
    """Exact 101-point AP via rationals: mean over r of max precision at recall >= r."""
    if n_truths == 0:
        return None
    points = []
    tp = 0
    for k, f in enumerate(flags, 1):
        tp += f
        points.append((Fraction(tp, n_truths), Fraction(tp, k)))
    total = Fraction(0)
    for j in range(101):
        r = Fraction(j, 100)
        precs = [p for rec, p in points if rec >= r]
        total += max(precs) if precs else 0
    return float(total / 101)


def _size(box, w, h):
    a = (box[2] - box[0]) * (box[3] - box[1]) * w * h
    return "small" if a < 1024 else "medium" if a < 9216 else "large"


def evaluate_oracle(images, dets):
    """``images``: list of (id, w, h, [(box, label)]); ``dets``: list of (image_id, box, label, score).

    Returns dict with ap, ap50, ap75, ap_small/medium/large, per_class.
    """
    labels = sorted({lab for _, _, _, truths in images for _, lab in truths})
    per_class, size_ap = {}, {s: {} for s in ("small", "medium", "large")}
    for lab in labels:
        aps, sizes = [], {s: [] for s in size_ap}
        for thr in THRESHOLDS:
            records, counts = [], {s: 0 for s in size_ap}
            for img_id, w, h, truths in images:
                tb = [tuple(b) for b, l in truths if l == lab]
                for b in tb:
                    counts[_size(b, w, h)] += 1
                ds = sorted(
                    [(s, tuple(b)) for i, b, l, s in dets if i == img_id and l == lab],
                    key=lambda x: (-x[0], img_id, *x[1]),
                )
                assign = best_assignment([b for _, b in ds], tb, float(thr))
                for (s, b), j in zip(ds, assign):
                    size = _size(tb[j], w, h) if j is not None else _size(b, w, h)
                    records.append(((-s, img_id, *b), j is not None, size))
            records.sort(key=lambda r: r[0])
            aps.append(ap_from_flags([tp for _, tp, _ in records], sum(counts.values())))
            for sz in size_ap:
                sizes[sz].append(ap_from_flags([tp for _, tp, s in records if s == sz], counts[sz]))
        per_class[lab] = aps
        for sz, vals in sizes.items():
            if vals[0] is not None:
                size_ap[sz][lab] = sum(vals) / len(vals)

    def mean(vals):
        vals = list(vals)
        return sum(vals) / len(vals) if vals else None

    return {
        "per_class": per_class,
        "ap": mean(sum(v) / len(v) for v in per_class.values()),
        "ap50": mean(v[0] for v in per_class.values()),
        "ap75": mean(v[5] for v in per_class.values()),
        "ap_small": mean(size_ap["small"].values()),
        "ap_medium": mean(size_ap["medium"].values()),
        "ap_large": mean(size_ap["large"].values()),
    }


# --- convolution --------------------------------------------------------------


def naive_conv2d(x, kernel, stride, padding):
    """Direct loop cross-correlation with zero padding."""
    c, h, w = x.shape
    o, _, k, _ = kernel.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ic in range(c):
                    for u in range(k):
                        for v in range(k):
                            y, xx = i * stride - padding + u, j * stride - padding + v
                            if 0 <= y < h and 0 <= xx < w:
                                acc += kernel[oc, ic, u, v] * x[ic, y, xx]
                out[oc, i, j] = acc
    return out

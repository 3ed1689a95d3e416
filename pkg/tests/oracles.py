"""Pure-Python reference implementations used as independent test oracles."""

import math


def distance(a, b, metric):
    if metric == "euclidean":
        return math.sqrt(sum((y - x) * (y - x) for x, y in zip(a, b)))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return 1.0 - sum(x * y for x, y in zip(a, b)) / (nb * na)


def rank(q, q_id, q_cam, gallery_rows, metric):
    """``gallery_rows`` holds ``(id, camera, vector)``; returns (order, match flags)."""
    eligible = [
        j for j, row in enumerate(gallery_rows) if not (q_cam is not None and row[0] == q_id and row[1] == q_cam)
    ]
    scored = sorted((distance(q, gallery_rows[j][2], metric), j) for j in eligible)
    return [j for _, j in scored], [gallery_rows[j][0] == q_id for _, j in scored]


def first_hit(matches):
    for i, m in enumerate(matches):
        if m:
            return i + 1
    return None


def top_k(all_matches, k):
    return sum(1 for m in all_matches if first_hit(m) is not None and first_hit(m) <= k) / len(all_matches)


def average_precision(matches):
    hits = [i for i, m in enumerate(matches) if m]
    return math.fsum((n + 1) / (h + 1) for n, h in enumerate(hits)) / len(hits)

"""Independent reference implementations used by the tests.

They share no code with the package: plain Python loops and exact
rational arithmetic, written for obviousness rather than speed.
"""
from __future__ import annotations

from collections import deque
from fractions import Fraction


def flood_fill_labels(mask, connectivity):
    """Raster-order BFS labelling of a list-of-lists boolean mask."""
    h, w = len(mask), len(mask[0])
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    labels = [[0] * w for _ in range(h)]
    n = 0
    for y in range(h):
        for x in range(w):
            if mask[y][x] and not labels[y][x]:
                n += 1
                labels[y][x] = n
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dy, dx in steps:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny][nx] and not labels[ny][nx]:
                            labels[ny][nx] = n
                            q.append((ny, nx))
    return labels, n


def otsu_brute(counts):
    """First k maximising the between-class variance w1*w2*(mu1-mu2)^2, with
    class 1 = levels <= k. Exact rationals; 0 when no split separates mass."""
    total = sum(counts)
    best_k, best = 0, Fraction(0)
    for k in range(256):
        n1 = sum(counts[: k + 1])
        n2 = total - n1
        if n1 == 0 or n2 == 0:
            continue
        s1 = sum(v * counts[v] for v in range(k + 1))
        s2 = sum(v * counts[v] for v in range(k + 1, 256))
        w1, w2 = Fraction(n1, total), Fraction(n2, total)
        var = w1 * w2 * (Fraction(s1, n1) - Fraction(s2, n2)) ** 2
        if var > best:
            best, best_k = var, k
    return best_k


def isodata_is_fixed_point(counts, t):
    """T == round-half-up((mean(<= T) + mean(> T)) / 2) with exact means."""
    lo = [(v, c) for v, c in enumerate(counts) if v <= t and c]
    hi = [(v, c) for v, c in enumerate(counts) if v > t and c]
    if not lo or not hi:
        return False
    m_lo = Fraction(sum(v * c for v, c in lo), sum(c for _, c in lo))
    m_hi = Fraction(sum(v * c for v, c in hi), sum(c for _, c in hi))
    mid = (m_lo + m_hi) / 2
    return t == (mid + Fraction(1, 2)).__floor__()


def mask_iou_dice(pred, gt):
    tp = fp = fn = 0
    for row_p, row_g in zip(pred, gt):
        for p, g in zip(row_p, row_g):
            tp += bool(p and g)
            fp += bool(p and not g)
            fn += bool(g and not p)
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return tp / (tp + fp + fn), 2 * tp / (2 * tp + fp + fn)

"""Planar geometry predicates for obstacle checks."""

from __future__ import annotations

import numpy as np


def point_in_rect(p, center, half_w: float, half_h: float) -> bool:
    """Strict containment of p in an axis-aligned rectangle."""
    return abs(p[0] - center[0]) < half_w and abs(p[1] - center[1]) < half_h


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) - 1e-12 <= p[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= p[1] <= max(a[1], b[1]) + 1e-12)


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True if segment p1-p2 intersects segment q1-q2 (touching counts)."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


def point_segment_distance(p, a, b) -> float:
    ap = np.asarray(p, dtype=float) - np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip(ap @ ab / denom, 0.0, 1.0))
    closest = np.asarray(a, dtype=float) + t * ab
    return float(np.linalg.norm(np.asarray(p, dtype=float) - closest))

"""2D segment handling: merging, matching, culling and clipping.

Segments are directed (start to end); direction comparisons below are over
the full circle, not modulo pi, because detector orientation encodes the
gradient side of the edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose

NEAR_PLANE = 1e-4  # camera-frame depth of the near clipping plane in metres


@dataclass(frozen=True)
class Segment2D:
    """Directed image segment with an optional binary descriptor."""

    start: np.ndarray
    end: np.ndarray
    descriptor: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.start, dtype=float)
        e = np.asarray(self.end, dtype=float)
        for name, x in (("start", s), ("end", e)):
            if x.shape != (2,) or not np.all(np.isfinite(x)):
                raise ValueError(f"{name} must be a finite 2-vector")
        if np.array_equal(s, e):
            raise ValueError("segment endpoints must be distinct")
        s, e = s.copy(), e.copy()
        s.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)
        if self.descriptor is not None:
            d = np.asarray(self.descriptor, dtype=np.uint8)
            if d.ndim != 1 or d.size == 0:
                raise ValueError("descriptor must be a non-empty byte vector")
            d = d.copy()
            d.flags.writeable = False
            object.__setattr__(self, "descriptor", d)

    @property
    def direction(self):
        d = self.end - self.start
        return d / np.linalg.norm(d)

    @property
    def length(self):
        return float(np.linalg.norm(self.end - self.start))

    @property
    def midpoint(self):
        return 0.5 * (self.start + self.end)


def descriptor_distance(a, b) -> int:
    """Hamming distance between two binary descriptors of equal size."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("descriptors must have the same length")
    return int(np.unpackbits(np.bitwise_xor(a, b)).sum())


@dataclass(frozen=True)
class MergeParams:
    """Gates for joining broken detections of one physical line."""

    max_angle: float = 0.035          # rad, between directed segment directions
    max_endpoint_gap: float = 5.0     # px, closest endpoint pair
    max_midpoint_dist: float = 2.0    # px, midpoint to the other supporting line
    max_descriptor_dist: int | None = 80


@dataclass(frozen=True)
class MatchParams:
    """Gates for declaring two segments observations of the same line."""

    max_angle: float = 0.1
    min_length_ratio: float = 0.7
    min_overlap_ratio: float = 0.5
    max_descriptor_dist: int | None = 80


def _angle_between(a: Segment2D, b: Segment2D):
    return float(np.arccos(np.clip(np.dot(a.direction, b.direction), -1.0, 1.0)))


def _endpoint_gap(a: Segment2D, b: Segment2D):
    pts_a = (a.start, a.end)
    pts_b = (b.start, b.end)
    return min(float(np.linalg.norm(p - q)) for p in pts_a for q in pts_b)


def _point_to_line_dist(p, seg: Segment2D):
    d = seg.direction
    r = p - seg.start
    return float(abs(r[0] * d[1] - r[1] * d[0]))


def _descriptor_gate(a: Segment2D, b: Segment2D, max_dist):
    if max_dist is None or a.descriptor is None or b.descriptor is None:
        return True
    return descriptor_distance(a.descriptor, b.descriptor) <= max_dist


def _merge_gate(a: Segment2D, b: Segment2D, params: MergeParams):
    """Endpoint gap if the pair is mergeable, else None."""
    if _angle_between(a, b) > params.max_angle:
        return None
    gap = _endpoint_gap(a, b)
    if gap > params.max_endpoint_gap:
        return None
    d = max(_point_to_line_dist(a.midpoint, b), _point_to_line_dist(b.midpoint, a))
    if d > params.max_midpoint_dist:
        return None
    if not _descriptor_gate(a, b, params.max_descriptor_dist):
        return None
    return gap


def _merge_pair(a: Segment2D, b: Segment2D):
    pts = [a.start, a.end, b.start, b.end]
    best = None
    for i in range(4):
        for j in range(i + 1, 4):
            dist = np.linalg.norm(pts[i] - pts[j])
            if best is None or dist > best[0]:
                best = (dist, i, j)
    p, q = pts[best[1]], pts[best[2]]
    if np.dot(q - p, a.direction) < 0.0:
        p, q = q, p
    descriptor = a.descriptor if a.length >= b.length else b.descriptor
    return Segment2D(p, q, descriptor)


def merge_segments(segments, params: MergeParams | None = None):
    """Join broken segments until no pair passes the gates.

    Each pass merges disjoint candidate pairs greedily in order of
    increasing endpoint gap, then re-runs on the result, so the output is a
    fixed point of the procedure (idempotent).
    """
    params = params or MergeParams()
    segs = list(segments)
    while True:
        candidates = []
        for i in range(len(segs)):
            for j in range(i + 1, len(segs)):
                gap = _merge_gate(segs[i], segs[j], params)
                if gap is not None:
                    candidates.append((gap, i, j))
        if not candidates:
            return segs
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        consumed = set()
        merged = []
        for gap, i, j in candidates:
            if i in consumed or j in consumed:
                continue
            merged.append(_merge_pair(segs[i], segs[j]))
            consumed.add(i)
            consumed.add(j)
        segs = [s for k, s in enumerate(segs) if k not in consumed] + merged


def _overlap_on(a: Segment2D, b: Segment2D):
    """Length of b's projection onto a's supporting line clipped to a."""
    d = a.direction
    lo = float(np.dot(b.start - a.start, d))
    hi = float(np.dot(b.end - a.start, d))
    if lo > hi:
        lo, hi = hi, lo
    return max(0.0, min(hi, a.length) - max(lo, 0.0))


def match_lines(a: Segment2D, b: Segment2D, params: MatchParams | None = None) -> bool:
    """Symmetric four-condition gate: angle, length ratio, overlap, descriptor."""
    params = params or MatchParams()
    if _angle_between(a, b) > params.max_angle:
        return False
    la, lb = a.length, b.length
    lmin, lmax = min(la, lb), max(la, lb)
    if lmin / lmax < params.min_length_ratio:
        return False
    overlap = min(_overlap_on(a, b), _overlap_on(b, a))
    if overlap / lmin < params.min_overlap_ratio:
        return False
    return _descriptor_gate(a, b, params.max_descriptor_dist)


def liang_barsky_clip(seg: Segment2D, rect):
    """Clip a segment to an axis-aligned rectangle (xmin, ymin, xmax, ymax).

    Returns the clipped segment with orientation and descriptor preserved,
    or None when nothing remains (including grazing hits of zero length).
    """
    xmin, ymin, xmax, ymax = (float(v) for v in rect)
    if xmin >= xmax or ymin >= ymax:
        raise ValueError("rectangle must have positive extent")
    x0, y0 = seg.start
    dx, dy = seg.end - seg.start
    p = (-dx, dx, -dy, dy)
    q = (x0 - xmin, xmax - x0, y0 - ymin, ymax - y0)
    t0, t1 = 0.0, 1.0
    for pi, qi in zip(p, q):
        if pi == 0.0:
            if qi < 0.0:
                return None
        else:
            r = qi / pi
            if pi < 0.0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    if t0 > t1:
        return None
    start = seg.start + t0 * np.array([dx, dy])
    end = seg.start + t1 * np.array([dx, dy])
    if np.linalg.norm(end - start) < 1e-12:
        return None
    return Segment2D(start, end, seg.descriptor)


def cull_line(start_w, end_w, pose: Pose, K: CameraIntrinsics,
              near_plane=NEAR_PLANE):
    """Visible image segment of a world-frame 3D segment, or None.

    Endpoints behind the near plane are moved to its intersection with the
    segment before projecting; the projected segment is then clipped to the
    image rectangle [0, width-1] x [0, height-1].
    """
    Xs = pose.transform(np.asarray(start_w, dtype=float))
    Xe = pose.transform(np.asarray(end_w, dtype=float))
    zs, ze = Xs[2], Xe[2]
    if zs < near_plane and ze < near_plane:
        return None
    if zs < near_plane or ze < near_plane:
        lam = (near_plane - zs) / (ze - zs)
        Xi = Xs + lam * (Xe - Xs)
        Xi[2] = near_plane
        if zs < near_plane:
            Xs = Xi
        else:
            Xe = Xi
    uv_s = K.project(Xs)
    uv_e = K.project(Xe)
    if np.linalg.norm(uv_e - uv_s) < 1e-12:
        return None
    seg = Segment2D(uv_s, uv_e)
    return liang_barsky_clip(seg, (0.0, 0.0, K.width - 1.0, K.height - 1.0))


def combined_similarity(point_similarity: float, line_similarity: float,
                        weight: float) -> float:
    """Convex combination weight*s_point + (1-weight)*s_line."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    return weight * float(point_similarity) + (1.0 - weight) * float(line_similarity)


# ---------------------------------------------------------------------------
# segment list I/O
# ---------------------------------------------------------------------------

def write_segments(segments, path):
    """One segment per line: ``us vs ue ve [descriptor-hex]``."""
    rows = []
    for s in segments:
        row = " ".join(repr(float(v)) for v in (*s.start, *s.end))
        if s.descriptor is not None:
            row += " " + bytes(s.descriptor).hex()
        rows.append(row)
    with open(path, "w") as f:
        f.write("\n".join(rows) + ("\n" if rows else ""))


def read_segments(path):
    segments = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (4, 5):
                raise ValueError(f"line {lineno}: expected 4 coordinates and an "
                                 f"optional descriptor, got {len(parts)} fields")
            try:
                vals = [float(p) for p in parts[:4]]
                desc = (np.frombuffer(bytes.fromhex(parts[4]), dtype=np.uint8)
                        if len(parts) == 5 else None)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            segments.append(Segment2D(np.array(vals[:2]), np.array(vals[2:]), desc))
    return segments

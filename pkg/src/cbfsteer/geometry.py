"""Exact 2D distance and ray-cast primitives for capsules, circles and rectangles.

All rectangles are axis-aligned and given by (center, half_extents). Signed
distances are negative iff the shapes overlap. Functions are exact (no
sampling); vectorized variants operate on stacked obstacle arrays.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points (..., 2) to the segment [a, b]."""
    points = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    dd = float(d @ d)
    if dd < _EPS:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip(((points - a) @ d) / dd, 0.0, 1.0)
    closest = a + t[..., None] * d
    return np.linalg.norm(points - closest, axis=-1)


def segment_point_distances(p: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Distance from one point p to many segments (starts/ends shaped (K, 2))."""
    p = np.asarray(p, dtype=float)
    starts = np.asarray(starts, dtype=float)
    d = np.asarray(ends, dtype=float) - starts
    dd = np.einsum("ki,ki->k", d, d)
    t = np.einsum("ki,ki->k", p - starts, d) / np.maximum(dd, _EPS)
    np.clip(t, 0.0, 1.0, out=t)
    closest = starts + t[:, None] * d
    return np.linalg.norm(p - closest, axis=-1)


def _orient(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Cross product (q-p) x (r-p); broadcasts over leading axes."""
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (
        q[..., 1] - p[..., 1]
    ) * (r[..., 0] - p[..., 0])


def _strict_sign_flip(d1: np.ndarray, d2: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """True where d1 and d2 have strictly opposite signs beyond noise level.

    Near-collinear configurations produce orientation values at roundoff
    scale with arbitrary signs; treating those as crossings would report
    phantom contacts, so values within tol count as zero (the endpoint
    distance fallback then reports a near-zero distance anyway whenever the
    segments genuinely touch).
    """
    return ((d1 > tol) & (d2 < -tol)) | ((d1 < -tol) & (d2 > tol))


def segments_intersect(a: np.ndarray, b: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Boolean mask: does segment [a, b] properly or improperly intersect each [starts_k, ends_k]?"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    d1 = _orient(starts, ends, a[None, :])
    d2 = _orient(starts, ends, b[None, :])
    d3 = _orient(a[None, :], b[None, :], starts)
    d4 = _orient(a[None, :], b[None, :], ends)
    proper = _strict_sign_flip(d1, d2) & _strict_sign_flip(d3, d4)

    def on_seg(p, q, r):
        # r collinear with [p, q] and within its bounding box
        collinear = np.abs(_orient(p, q, r)) <= _EPS
        inx = (r[..., 0] >= np.minimum(p[..., 0], q[..., 0]) - _EPS) & (
            r[..., 0] <= np.maximum(p[..., 0], q[..., 0]) + _EPS
        )
        iny = (r[..., 1] >= np.minimum(p[..., 1], q[..., 1]) - _EPS) & (
            r[..., 1] <= np.maximum(p[..., 1], q[..., 1]) + _EPS
        )
        return collinear & inx & iny

    touch = (
        on_seg(starts, ends, a[None, :])
        | on_seg(starts, ends, b[None, :])
        | on_seg(a[None, :], b[None, :], starts)
        | on_seg(a[None, :], b[None, :], ends)
    )
    return proper | touch


def segment_segment_distance(a1: np.ndarray, b1: np.ndarray, a2: np.ndarray, b2: np.ndarray) -> float:
    """Distance between two segments; 0 if they intersect."""
    a2 = np.asarray(a2, dtype=float).reshape(1, 2)
    b2 = np.asarray(b2, dtype=float).reshape(1, 2)
    if bool(segments_intersect(np.asarray(a1, float), np.asarray(b1, float), a2, b2)[0]):
        return 0.0
    cands = [
        float(point_segment_distance(np.asarray(a1, float), a2[0], b2[0])),
        float(point_segment_distance(np.asarray(b1, float), a2[0], b2[0])),
        float(point_segment_distance(a2[0], np.asarray(a1, float), np.asarray(b1, float))),
        float(point_segment_distance(b2[0], np.asarray(a1, float), np.asarray(b1, float))),
    ]
    return min(cands)


def point_rect_sdf(points: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Signed distance from points (..., 2) to a solid rectangle (negative inside)."""
    q = np.abs(np.asarray(points, dtype=float) - np.asarray(center, dtype=float)) - np.asarray(
        half, dtype=float
    )
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.maximum(q[..., 0], q[..., 1]), 0.0)
    return outside + inside


def rect_edges(center: np.ndarray, half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Corner-to-corner edge segments of a rectangle, as (starts (4,2), ends (4,2))."""
    cx, cy = float(center[0]), float(center[1])
    hx, hy = float(half[0]), float(half[1])
    corners = np.array(
        [[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]]
    )
    return corners, np.roll(corners, -1, axis=0)


def _segment_rect_clip(a: np.ndarray, d: np.ndarray, center: np.ndarray, half: np.ndarray):
    """Liang-Barsky clip of a + t*d, t in [0,1], against the rectangle. None if disjoint."""
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        lo = center[axis] - half[axis]
        hi = center[axis] + half[axis]
        if abs(d[axis]) < _EPS:
            if a[axis] < lo or a[axis] > hi:
                return None
        else:
            ta = (lo - a[axis]) / d[axis]
            tb = (hi - a[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 > t1:
                return None
    return t0, t1


def segment_rect_signed_distance(a: np.ndarray, b: np.ndarray, center: np.ndarray, half: np.ndarray) -> float:
    """min over the segment of the rectangle SDF: positive separation, negative depth.

    Outside case reduces to edge distances; the overlapping case minimizes the
    piecewise-linear interior SDF exactly over its breakpoints.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    center = np.asarray(center, dtype=float)
    half = np.asarray(half, dtype=float)
    d = b - a
    clip = _segment_rect_clip(a, d, center, half)
    if clip is None:
        starts, ends = rect_edges(center, half)
        dists = [segment_segment_distance(a, b, starts[k], ends[k]) for k in range(4)]
        return min(dists)
    t0, t1 = clip
    # Interior SDF along the segment: f(t) = max(|px(t)|-hx, |py(t)|-hy), piecewise linear.
    rel = a - center

    def f(t: float) -> float:
        p = rel + t * d
        return max(abs(p[0]) - half[0], abs(p[1]) - half[1])

    cands = [t0, t1]
    for axis in range(2):
        if abs(d[axis]) > _EPS:
            cands.append(-rel[axis] / d[axis])  # |p_axis| kink
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            den = s1 * d[0] - s2 * d[1]
            if abs(den) > _EPS:
                t = (half[0] - half[1] - s1 * rel[0] + s2 * rel[1]) / den
                cands.append(t)
    vals = [f(t) for t in cands if t0 - _EPS <= t <= t1 + _EPS]
    return min(vals)


def segment_rects_signed_distance(
    a: np.ndarray, b: np.ndarray, centers: np.ndarray, halves: np.ndarray
) -> np.ndarray:
    """Vectorized segment-vs-rectangles signed distance over K rectangles.

    Disjoint pairs are handled with one batched segment/edge pass; overlapping
    pairs (detected by clipping) fall back to the exact scalar routine.
    """
    centers = np.asarray(centers, dtype=float)
    halves = np.asarray(halves, dtype=float)
    k = centers.shape[0]
    if k == 0:
        return np.empty(0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # Edge segments for all rects: (K*4, 2)
    hx = halves[:, 0]
    hy = halves[:, 1]
    corners = np.stack(
        [
            centers + np.stack([-hx, -hy], axis=1),
            centers + np.stack([hx, -hy], axis=1),
            centers + np.stack([hx, hy], axis=1),
            centers + np.stack([-hx, hy], axis=1),
        ],
        axis=1,
    )  # (K, 4, 2)
    starts = corners.reshape(-1, 2)
    ends = np.roll(corners, -1, axis=1).reshape(-1, 2)
    # endpoint-to-edge and corner-to-segment distances
    p2e_a = _points_to_segments(a, starts, ends)
    p2e_b = _points_to_segments(b, starts, ends)
    c2s_1 = point_segment_distance(starts, a, b)
    c2s_2 = point_segment_distance(ends, a, b)
    edge_min = np.minimum.reduce([p2e_a, p2e_b, c2s_1, c2s_2]).reshape(k, 4).min(axis=1)

    # Vectorized overlap test (Liang-Barsky over all rects at once); overlapping
    # pairs get the exact interior minimum from the scalar routine.
    d = b - a
    rel = centers - a
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    t_lo = (rel - halves) * inv
    t_hi = (rel + halves) * inv
    t_min = np.minimum(t_lo, t_hi)
    t_max = np.maximum(t_lo, t_hi)
    parallel = np.abs(d) < _EPS
    inside_slab = np.abs(rel) <= halves
    t_min = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_min)
    t_max = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_max)
    t0 = np.maximum(t_min.max(axis=1), 0.0)
    t1 = np.minimum(t_max.min(axis=1), 1.0)
    overlap = t0 <= t1

    out = edge_min
    for i in np.flatnonzero(overlap):
        out[i] = segment_rect_signed_distance(a, b, centers[i], halves[i])
    return out


def _points_to_segments(p: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    return segment_point_distances(p, starts, ends)


def segment_circles_signed_distance(
    a: np.ndarray, b: np.ndarray, centers: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """Vectorized segment-vs-circles signed distance: |seg - center| - radius."""
    centers = np.asarray(centers, dtype=float)
    if centers.shape[0] == 0:
        return np.empty(0)
    return point_segment_distance(centers, np.asarray(a, float), np.asarray(b, float)) - np.asarray(
        radii, dtype=float
    )


def capsule_world_min(seg_a: np.ndarray, seg_b: np.ndarray,
                      circle_c: np.ndarray, circle_r: np.ndarray,
                      rect_c: np.ndarray, rect_h: np.ndarray,
                      edge_s: np.ndarray, edge_e: np.ndarray) -> np.ndarray:
    """Fused min distance from R segments to all obstacles (before radius offsets).

    Returns (R,) of min over circles of (dist - radius) and over rectangles of
    the signed rect distance (edge distances for disjoint pairs, exact interior
    depth for overlapping ones). Flat component arithmetic keeps the per-call
    overhead low; this is the planner's innermost kernel.
    """
    ax = seg_a[:, 0]
    ay = seg_a[:, 1]
    dx = seg_b[:, 0] - ax
    dy = seg_b[:, 1] - ay
    r = ax.shape[0]
    best = np.full(r, np.inf)

    if circle_c.shape[0]:
        dd = np.maximum(dx * dx + dy * dy, _EPS)
        relx = circle_c[None, :, 0] - ax[:, None]
        rely = circle_c[None, :, 1] - ay[:, None]
        t = (relx * dx[:, None] + rely * dy[:, None]) / dd[:, None]
        np.clip(t, 0.0, 1.0, out=t)
        gx = relx - t * dx[:, None]
        gy = rely - t * dy[:, None]
        dist = np.sqrt(gx * gx + gy * gy) - circle_r[None, :]
        best = np.minimum(best, dist.min(axis=1))

    k = rect_c.shape[0]
    if k:
        # endpoint-of-link to rect edges and rect corners to link, componentwise
        sx = edge_s[:, 0][None, :]
        sy = edge_s[:, 1][None, :]
        exx = edge_e[:, 0][None, :]
        eyy = edge_e[:, 1][None, :]
        edx = exx - sx
        edy = eyy - sy
        edd = np.maximum(edx * edx + edy * edy, _EPS)

        def p2e(px, py):
            t = ((px - sx) * edx + (py - sy) * edy) / edd
            np.clip(t, 0.0, 1.0, out=t)
            cx = sx + t * edx - px
            cy = sy + t * edy - py
            return cx * cx + cy * cy

        bx = seg_b[:, 0]
        by = seg_b[:, 1]
        d2 = np.minimum(p2e(ax[:, None], ay[:, None]), p2e(bx[:, None], by[:, None]))
        ldd = np.maximum(dx * dx + dy * dy, _EPS)[:, None]

        def c2s(px, py):
            t = ((px - ax[:, None]) * dx[:, None] + (py - ay[:, None]) * dy[:, None]) / ldd
            np.clip(t, 0.0, 1.0, out=t)
            cx = ax[:, None] + t * dx[:, None] - px
            cy = ay[:, None] + t * dy[:, None] - py
            return cx * cx + cy * cy

        d2 = np.minimum(d2, c2s(sx, sy))
        d2 = np.minimum(d2, c2s(exx, eyy))
        rect_d = np.sqrt(d2.reshape(r, k, 4).min(axis=2))

        # overlap detection via slab clipping, componentwise
        with np.errstate(divide="ignore", invalid="ignore"):
            invx = 1.0 / dx
            invy = 1.0 / dy
        rcx = rect_c[None, :, 0] - ax[:, None]
        rcy = rect_c[None, :, 1] - ay[:, None]
        hx = rect_h[None, :, 0]
        hy = rect_h[None, :, 1]
        t1x = (rcx - hx) * invx[:, None]
        t2x = (rcx + hx) * invx[:, None]
        t1y = (rcy - hy) * invy[:, None]
        t2y = (rcy + hy) * invy[:, None]
        tminx = np.minimum(t1x, t2x)
        tmaxx = np.maximum(t1x, t2x)
        tminy = np.minimum(t1y, t2y)
        tmaxy = np.maximum(t1y, t2y)
        par_x = np.abs(dx) < _EPS
        par_y = np.abs(dy) < _EPS
        if par_x.any():
            inside = np.abs(rcx) <= hx
            tminx = np.where(par_x[:, None], np.where(inside, -np.inf, np.inf), tminx)
            tmaxx = np.where(par_x[:, None], np.where(inside, np.inf, -np.inf), tmaxx)
        if par_y.any():
            inside = np.abs(rcy) <= hy
            tminy = np.where(par_y[:, None], np.where(inside, -np.inf, np.inf), tminy)
            tmaxy = np.where(par_y[:, None], np.where(inside, np.inf, -np.inf), tmaxy)
        t0 = np.maximum(np.maximum(tminx, tminy), 0.0)
        t1 = np.minimum(np.minimum(tmaxx, tmaxy), 1.0)
        overlap = t0 <= t1
        if overlap.any():
            for ri, ki in zip(*np.nonzero(overlap)):
                rect_d[ri, ki] = segment_rect_signed_distance(
                    seg_a[ri], seg_b[ri], rect_c[ki], rect_h[ki])
        best = np.minimum(best, rect_d.min(axis=1))
    return best


def seg_seg_distance_grid(a1: np.ndarray, b1: np.ndarray, a2: np.ndarray, b2: np.ndarray
                          ) -> np.ndarray:
    """Pairwise endpoint-based segment distances: (R,) segments vs (E,) segments.

    Valid as the true distance whenever the pairs do not cross (the caller
    handles crossing/containment separately). Returns (R, E).
    """
    a1 = np.asarray(a1, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    b2 = np.asarray(b2, dtype=float)

    def pts_to_segs(p, s, e):
        # p: (..., 2) points; s, e: (..., 2) segments; broadcast leading dims
        d = e - s
        dd = np.maximum(np.einsum("...i,...i->...", d, d), _EPS)
        t = np.clip(np.einsum("...i,...i->...", p - s, d) / dd, 0.0, 1.0)
        closest = s + t[..., None] * d
        return np.linalg.norm(p - closest, axis=-1)

    s2 = a2[None, :, :]
    e2 = b2[None, :, :]
    d_a1 = pts_to_segs(a1[:, None, :], s2, e2)
    d_b1 = pts_to_segs(b1[:, None, :], s2, e2)
    s1 = a1[:, None, :]
    e1 = b1[:, None, :]
    d_a2 = pts_to_segs(a2[None, :, :], s1, e1)
    d_b2 = pts_to_segs(b2[None, :, :], s1, e1)
    return np.minimum.reduce([d_a1, d_b1, d_a2, d_b2])


def seg_seg_distance_paired(a1: np.ndarray, b1: np.ndarray, a2: np.ndarray, b2: np.ndarray
                            ) -> np.ndarray:
    """Elementwise segment-pair distances (R,), zero where the pairs intersect."""
    a1 = np.asarray(a1, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    b2 = np.asarray(b2, dtype=float)

    def pts_to_segs(p, s, e):
        d = e - s
        dd = np.maximum(np.einsum("...i,...i->...", d, d), _EPS)
        t = np.clip(np.einsum("...i,...i->...", p - s, d) / dd, 0.0, 1.0)
        closest = s + t[..., None] * d
        return np.linalg.norm(p - closest, axis=-1)

    dist = np.minimum.reduce([
        pts_to_segs(a1, a2, b2),
        pts_to_segs(b1, a2, b2),
        pts_to_segs(a2, a1, b1),
        pts_to_segs(b2, a1, b1),
    ])
    d1 = _orient(a2, b2, a1)
    d2 = _orient(a2, b2, b1)
    d3 = _orient(a1, b1, a2)
    d4 = _orient(a1, b1, b2)
    proper = _strict_sign_flip(d1, d2) & _strict_sign_flip(d3, d4)
    return np.where(proper, 0.0, dist)


def segs_rects_overlap(a: np.ndarray, d: np.ndarray, centers: np.ndarray, halves: np.ndarray
                       ) -> np.ndarray:
    """Boolean (R, K): does segment r (start a, direction d, t in [0,1]) meet rect k?"""
    rel = centers[None, :, :] - a[:, None, :]  # (R, K, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    t_lo = (rel - halves[None, :, :]) * inv[:, None, :]
    t_hi = (rel + halves[None, :, :]) * inv[:, None, :]
    t_min = np.minimum(t_lo, t_hi)
    t_max = np.maximum(t_lo, t_hi)
    parallel = np.abs(d)[:, None, :] < _EPS
    inside_slab = np.abs(rel) <= halves[None, :, :]
    t_min = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_min)
    t_max = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_max)
    t0 = np.maximum(t_min.max(axis=2), 0.0)
    t1 = np.minimum(t_max.min(axis=2), 1.0)
    return t0 <= t1


def ray_circles(
    origins: np.ndarray, dirs: np.ndarray, centers: np.ndarray, radii: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """First-hit parameters of R rays against K circles.

    origins/dirs: (R, 2) with unit dirs. Returns (t (R, K) with inf for miss,
    normals (R, K, 2) outward at the hit point).
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    rel = origins[:, None, :] - centers[None, :, :]  # (R, K, 2)
    bq = np.einsum("rki,ri->rk", rel, dirs)
    cq = np.einsum("rki,rki->rk", rel, rel) - radii[None, :] ** 2
    disc = bq * bq - cq
    hit = disc >= 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t_near = -bq - sq
    t_far = -bq + sq
    t = np.where(t_near >= 0.0, t_near, t_far)
    t = np.where(hit & (t >= 0.0), t, np.inf)
    t_safe = np.where(np.isfinite(t), t, 0.0)
    pts = origins[:, None, :] + t_safe[..., None] * dirs[:, None, :]
    normals = pts - centers[None, :, :]
    norms = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = normals / np.maximum(norms, _EPS)
    return t, normals


def ray_rects(
    origins: np.ndarray, dirs: np.ndarray, centers: np.ndarray, halves: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """First-hit parameters of R rays against K rectangles (slab method).

    Returns (t (R, K) with inf for miss, normals (R, K, 2): outward face normal
    of the entry face).
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    centers = np.asarray(centers, dtype=float)
    halves = np.asarray(halves, dtype=float)
    rel = centers[None, :, :] - origins[:, None, :]  # (R, K, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs  # inf on parallel axes is fine for the slab method
    t_lo = (rel - halves[None, :, :]) * inv[:, None, :]
    t_hi = (rel + halves[None, :, :]) * inv[:, None, :]
    t_min = np.minimum(t_lo, t_hi)
    t_max = np.maximum(t_lo, t_hi)
    # Parallel axis: ray misses unless origin is within the slab.
    parallel = np.abs(dirs)[:, None, :] < _EPS
    inside_slab = np.abs(rel) <= halves[None, :, :]
    t_min = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_min)
    t_max = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_max)
    near_axis = np.argmax(t_min, axis=-1)  # (R, K)
    t_near = np.max(t_min, axis=-1)
    t_far = np.min(t_max, axis=-1)
    hit = (t_near <= t_far) & (t_far >= 0.0)
    t = np.where(t_near >= 0.0, t_near, t_far)
    t = np.where(hit & np.isfinite(t), t, np.inf)
    # Outward normal on the entry face: axis-aligned, sign opposite ray direction component.
    dirs_b = np.broadcast_to(dirs[:, None, :], t.shape + (2,))
    comp = np.take_along_axis(dirs_b, near_axis[..., None], axis=2)[..., 0]
    sign = -np.sign(comp)
    sign = np.where(sign == 0.0, 1.0, sign)
    normals = np.zeros(t.shape + (2,))
    np.put_along_axis(normals, near_axis[..., None], sign[..., None], axis=2)
    return t, normals

"""Exact tile coverage of polygonal annotations.

Overlapping annotations are merged with shapely first. Each tile's covered
area is then the Sutherland-Hodgman clip of every merged exterior against the
unit cell minus the clips of its holes.
"""
from __future__ import annotations

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon

from ..errors import DomainError


def shoelace_area(poly):
    """Absolute area of a simple polygon given as an ``(n, 2)`` vertex array."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_edge(points, inside, cross):
    out = []
    n = len(points)
    for i in range(n):
        cur, prev = points[i], points[i - 1]
        cur_in, prev_in = inside(cur), inside(prev)
        if cur_in:
            if not prev_in:
                out.append(cross(prev, cur))
            out.append(cur)
        elif prev_in:
            out.append(cross(prev, cur))
    return out


def _cross_x(x0):
    def f(a, b):
        t = (x0 - a[0]) / (b[0] - a[0])
        return (x0, a[1] + t * (b[1] - a[1]))
    return f


def _cross_y(y0):
    def f(a, b):
        t = (y0 - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), y0)
    return f


def clip_to_rect(poly, xmin, ymin, xmax, ymax):
    """Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle."""
    pts = [tuple(map(float, v)) for v in poly]
    for inside, cross in (
        (lambda p: p[0] >= xmin, _cross_x(xmin)),
        (lambda p: p[0] <= xmax, _cross_x(xmax)),
        (lambda p: p[1] >= ymin, _cross_y(ymin)),
        (lambda p: p[1] <= ymax, _cross_y(ymax)),
    ):
        if not pts:
            break
        pts = _clip_edge(pts, inside, cross)
    return pts


def validate_polygon(poly, width=None, height=None):
    """Return the vertex array of a simple polygon, optionally checking grid bounds."""
    p = np.asarray(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise DomainError("a polygon needs at least three (x, y) vertices")
    if not np.all(np.isfinite(p)):
        raise DomainError("polygon vertices must be finite")
    shape = Polygon(p)
    # collinear rings are degenerate: allowed, with zero area
    degenerate = np.linalg.matrix_rank(p - p[0]) < 2
    if not degenerate and not shape.is_valid:
        raise DomainError(f"polygon is not simple: {shapely.is_valid_reason(shape)}")
    if width is not None and (p[:, 0].min() < 0 or p[:, 0].max() > width
                              or p[:, 1].min() < 0 or p[:, 1].max() > height):
        raise DomainError("polygon leaves the slide grid")
    return p


def merge_polygons(polygons):
    """Union of the polygons as a list of ``(exterior, [holes])`` vertex arrays."""
    shapes = [Polygon(validate_polygon(p)) for p in polygons]
    shapes = [s for s in shapes if s.area > 0]
    if not shapes:
        return []
    merged = shapely.unary_union(shapes)
    parts = merged.geoms if isinstance(merged, MultiPolygon) else [merged]
    out = []
    for part in parts:
        if part.is_empty or part.area == 0:
            continue
        ext = np.asarray(part.exterior.coords)[:-1]
        holes = [np.asarray(h.coords)[:-1] for h in part.interiors]
        out.append((ext, holes))
    return out


def _covered(merged, x0, y0, x1, y1):
    area = 0.0
    for ext, holes in merged:
        area += shoelace_area(clip_to_rect(ext, x0, y0, x1, y1))
        for hole in holes:
            area -= shoelace_area(clip_to_rect(hole, x0, y0, x1, y1))
    return area


def compute_coverage(cell, polygons):
    """Fraction of the unit cell with lower-left corner ``cell = (x, y)`` inside the union."""
    x, y = cell
    return float(_snap(_covered(merge_polygons(polygons), x, y, x + 1, y + 1))[0])


def _snap(values):
    # clipping rounds full and empty cells by a few ulps; pin them to the exact bounds
    values = np.atleast_1d(np.clip(values, 0.0, 1.0))
    values[np.abs(values - 1.0) < 1e-12] = 1.0
    values[values < 1e-12] = 0.0
    return values


def coverage_grid(width, height, polygons):
    """Coverage of every cell of a ``width x height`` grid, shape ``(height, width)``."""
    grid = np.zeros((height, width))
    merged = merge_polygons(polygons)
    for ext, holes in merged:
        xmin, ymin = np.floor(ext.min(axis=0)).astype(int)
        xmax, ymax = np.ceil(ext.max(axis=0)).astype(int)
        for cy in range(max(ymin, 0), min(ymax, height)):
            for cx in range(max(xmin, 0), min(xmax, width)):
                a = shoelace_area(clip_to_rect(ext, cx, cy, cx + 1, cy + 1))
                for hole in holes:
                    a -= shoelace_area(clip_to_rect(hole, cx, cy, cx + 1, cy + 1))
                grid[cy, cx] += a
    # merged parts are disjoint, so the sum is the union area up to rounding
    return _snap(grid)


def union_area(polygons):
    return sum(shoelace_area(e) - sum(shoelace_area(h) for h in hs)
               for e, hs in merge_polygons(polygons))


def star_polygon(center, radius, n_vertices, rng, roughness=0.3):
    """Random star-shaped (hence simple) polygon around ``center``."""
    step = 2 * np.pi / n_vertices
    angles = (np.arange(n_vertices) + rng.uniform(-0.3, 0.3, n_vertices)) * step
    radii = radius * (1.0 - roughness * rng.random(n_vertices))
    return np.column_stack([center[0] + radii * np.cos(angles),
                            center[1] + radii * np.sin(angles)])

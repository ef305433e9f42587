"""Cut geometry between a background mesh and convex submesh footprints.

Background cells are classified as uncut, cut or covered; cut cells get
their hidden part ``K ∩ footprint`` as a convex polygon.  Interface segments
(the visible outer boundary of each submesh, split by background cells) and
overlap pieces (hidden parts split by submesh cells) feed the Nitsche
coupling and the overlap stabilization.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, HaloError, OverlapError, UnsupportedGeometryError
from .mesh import GAMMA, GAMMA_E, GAMMA_I, LAMBDA, boundary_loops, signed_polygon_area
from .quadrature import polygon_quadrature

TOL = 1e-12

UNCUT = 0
CUT = 1
COVERED = 2


class ConvexPolygon:
    """CCW convex polygon with cached edge half-planes."""

    def __init__(self, points, check=True):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(p) >= 3 and signed_polygon_area(p) < 0:
            p = p[::-1]
        self.points = p
        q = np.roll(p, -1, axis=0)
        self._a = p
        self._t = q - p
        if check and len(p) >= 3:
            cross = self._t[:, 0] * np.roll(self._t, -1, axis=0)[:, 1] - self._t[:, 1] * np.roll(self._t, -1, axis=0)[:, 0]
            scale = np.max(np.linalg.norm(self._t, axis=1)) ** 2
            if np.any(cross < -TOL * max(scale, 1.0)):
                raise UnsupportedGeometryError("polygon is not convex")

    def __len__(self):
        return len(self.points)

    @property
    def area(self):
        return signed_polygon_area(self.points)

    @property
    def perimeter(self):
        return float(np.linalg.norm(self._t, axis=1).sum())

    @property
    def bbox(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    def signed_distances(self, pts):
        """Cross-product side test of ``pts`` (n, 2) against every edge: (n, k)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        d = pts[:, None, :] - self._a[None, :, :]
        return self._t[None, :, 0] * d[:, :, 1] - self._t[None, :, 1] * d[:, :, 0]

    def contains(self, pts, tol=TOL):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(self.points) < 3:
            return np.zeros(len(pts), dtype=bool)
        # inscribed/circumscribed circles about the vertex mean settle most points
        c = self.points.mean(axis=0)
        L = np.linalg.norm(self._t, axis=1)
        r_in = np.min((self._t[:, 0] * (c[1] - self._a[:, 1]) - self._t[:, 1] * (c[0] - self._a[:, 0])) / L)
        r_out = np.max(np.linalg.norm(self.points - c, axis=1))
        d = np.linalg.norm(pts - c, axis=1)
        out = d < r_in * (1 - 1e-9)
        band = np.flatnonzero(~out & (d <= r_out * (1 + 1e-9) + tol))
        if len(band):
            out[band] = np.all(self.signed_distances(pts[band]) >= -tol, axis=1)
        return out


# ---------------------------------------------------------------- clipping


def _clip_halfplane(poly, a, t):
    out = []
    n = len(poly)
    if n == 0:
        return out
    s = poly[-1]
    ds = t[0] * (s[1] - a[1]) - t[1] * (s[0] - a[0])
    for e in poly:
        de = t[0] * (e[1] - a[1]) - t[1] * (e[0] - a[0])
        if de >= -TOL:
            if ds < -TOL:
                r = ds / (ds - de)
                out.append((s[0] + r * (e[0] - s[0]), s[1] + r * (e[1] - s[1])))
            out.append(e)
        elif ds >= -TOL:
            r = ds / (ds - de)
            out.append((s[0] + r * (e[0] - s[0]), s[1] + r * (e[1] - s[1])))
        s, ds = e, de
    return out


def _dedupe(pts):
    out = []
    for p in pts:
        if not out or abs(p[0] - out[-1][0]) > TOL or abs(p[1] - out[-1][1]) > TOL:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= TOL and abs(out[0][1] - out[-1][1]) <= TOL:
        out.pop()
    return out


def clip_polygon(subject, clip):
    """Intersection of a convex polygon ``subject`` with a ConvexPolygon ``clip``.

    Returns a (k, 2) array, empty when the intersection has no area.
    """
    subject = np.asarray(subject, dtype=float).reshape(-1, 2)
    if len(subject) < 3 or len(clip) < 3:
        return np.zeros((0, 2))
    # only edges that cut off part of the subject matter
    dist = clip.signed_distances(subject)
    if np.any(np.all(dist < -TOL, axis=0)):
        return np.zeros((0, 2))
    active = np.flatnonzero(np.any(dist < -TOL, axis=0))
    poly = [tuple(p) for p in subject.tolist()]
    for k in active:
        poly = _clip_halfplane(poly, clip._a[k], clip._t[k])
        if len(poly) < 3:
            return np.zeros((0, 2))
    poly = _dedupe(poly)
    if len(poly) < 3:
        return np.zeros((0, 2))
    out = np.array(poly)
    if signed_polygon_area(out) <= TOL * TOL:
        return np.zeros((0, 2))
    return out


def clip_triangle(tri, poly):
    """Intersection of a triangle with a convex polygon."""
    if not isinstance(poly, ConvexPolygon):
        poly = ConvexPolygon(poly)
    tri = np.asarray(tri, dtype=float).reshape(3, 2)
    if signed_polygon_area(tri) < 0:
        tri = tri[::-1]
    return clip_polygon(tri, poly)


# ---------------------------------------------------------------- footprints


def footprint_polygon(submesh):
    """CCW polygon of the submesh's outer (marker 2) boundary loop."""
    loops = [lp for lp in boundary_loops(submesh) if np.any(lp.markers == LAMBDA)]
    if len(loops) != 1:
        raise UnsupportedGeometryError(f"expected one outer loop, found {len(loops)}")
    pts = loops[0].coords(submesh)
    return ConvexPolygon(_drop_collinear(pts))


def core_polygon(submesh):
    """Convex hull of the submesh's hole / material-interface vertices, or None.

    Cut background cells must stay clear of this region (halo rule).
    """
    verts = np.unique(submesh.facets[np.isin(submesh.facet_marker, [GAMMA, GAMMA_I, GAMMA_E])])
    if len(verts) < 3:
        return None
    from scipy.spatial import ConvexHull

    pts = submesh.vertices[verts]
    hull = ConvexHull(pts)
    return ConvexPolygon(pts[hull.vertices], check=False)


def _drop_collinear(pts):
    keep = []
    n = len(pts)
    for i in range(n):
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > TOL * max(1.0, np.dot(b - a, b - a)):
            keep.append(i)
    return pts[keep]


# ---------------------------------------------------------------- classification


@dataclass
class Classification:
    status: np.ndarray                       # UNCUT / CUT / COVERED per background cell
    owner: np.ndarray                        # owning submesh index, -1 for uncut
    hidden: dict = field(default_factory=dict)   # cut cell -> polygon K ∩ footprint

    def cells_with(self, status):
        return np.flatnonzero(self.status == status)

    def counts(self):
        return {name: int(np.sum(self.status == s)) for name, s in (("uncut", UNCUT), ("cut", CUT), ("covered", COVERED))}


def _bbox_overlap(lo, hi, cell_lo, cell_hi):
    return np.all(cell_hi >= lo - TOL, axis=1) & np.all(cell_lo <= hi + TOL, axis=1)


class BoxIndex:
    """Uniform-grid bucketing of axis-aligned boxes for overlap queries."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        n = len(self.lo)
        self.origin = self.lo.min(axis=0) if n else np.zeros(2)
        ext = (self.hi - self.lo).max(axis=1) if n else np.ones(1)
        self.size = max(float(np.median(ext)) if n else 1.0, 1e-12)
        i0, i1 = self._bins(self.lo), self._bins(self.hi)
        span = i1 - i0 + 1
        counts = span[:, 0] * span[:, 1]
        box = np.repeat(np.arange(n), counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        sx = np.repeat(span[:, 0], counts)
        bx = np.repeat(i0[:, 0], counts) + local % sx
        by = np.repeat(i0[:, 1], counts) + local // sx
        self._ny = int(by.max()) + 2 if n else 1
        key = bx * self._ny + by
        order = np.argsort(key, kind="stable")
        self._keys = key[order]
        self._boxes = box[order]

    def _bins(self, x):
        return np.floor((np.asarray(x) - self.origin) / self.size).astype(np.int64)

    def query(self, lo, hi):
        """Indices of boxes overlapping [lo, hi] (with TOL slack), sorted."""
        b0 = np.maximum(self._bins(np.asarray(lo) - TOL), 0)
        b1 = self._bins(np.asarray(hi) + TOL)
        b1[1] = min(b1[1], self._ny - 1)
        if np.any(b1 < b0):
            return np.zeros(0, dtype=np.int64)
        parts = []
        for ix in range(b0[0], b1[0] + 1):
            k0, k1 = ix * self._ny + b0[1], ix * self._ny + b1[1]
            a, b = np.searchsorted(self._keys, [k0, k1 + 1])
            parts.append(self._boxes[a:b])
        if not parts:
            return np.zeros(0, dtype=np.int64)
        cand = np.unique(np.concatenate(parts))
        return cand[_bbox_overlap(np.asarray(lo), np.asarray(hi), self.lo[cand], self.hi[cand])]


def classify_cells(background, footprints, cores=None):
    """Classify background cells against pairwise-disjoint convex footprints.

    Each cut cell belongs to exactly one footprint.

    ``cores`` (one polygon or None per footprint) are regions that cut cells
    must not touch; violating them raises HaloError.
    """
    footprints = [fp if isinstance(fp, ConvexPolygon) else ConvexPolygon(fp) for fp in footprints]
    for i in range(len(footprints)):
        for j in range(i + 1, len(footprints)):
            if len(clip_polygon(footprints[i].points, footprints[j])):
                raise OverlapError(f"footprints {i} and {j} overlap")
    m = background.num_cells
    status = np.zeros(m, dtype=np.int8)
    owner = np.full(m, -1, dtype=np.int64)
    hidden = {}
    coords = background.cell_coords()
    cell_lo = coords.min(axis=1)
    cell_hi = coords.max(axis=1)
    areas = background.areas
    for j, fp in enumerate(footprints):
        lo, hi = fp.bbox
        cand = np.flatnonzero(_bbox_overlap(lo, hi, cell_lo, cell_hi))
        if len(cand) == 0:
            continue
        inside = fp.contains(coords[cand].reshape(-1, 2)).reshape(-1, 3)
        full = np.all(inside, axis=1)
        status[cand[full]] = COVERED
        owner[cand[full]] = j
        for k in cand[~full].tolist():
            poly = clip_polygon(coords[k], fp)
            if len(poly) == 0:
                continue
            if owner[k] not in (-1, j) and signed_polygon_area(poly) > areas[k] * 1e-12:
                # one hidden polygon per cell: two footprints may not share a cut cell
                raise OverlapError(f"footprints {owner[k]} and {j} both cut background cell {k}; "
                                   "keep submeshes at least one background cell apart")
            a = signed_polygon_area(poly)
            if a >= areas[k] * (1.0 - 1e-12):
                status[k] = COVERED
            elif a > areas[k] * 1e-12:
                status[k] = CUT
                hidden[k] = poly
            else:
                continue
            owner[k] = j
        core = None if cores is None else cores[j]
        if core is not None:
            clo, chi = core.bbox
            cut_cells = np.flatnonzero((owner == j) & (status == CUT))
            near = cut_cells[_bbox_overlap(clo, chi, cell_lo[cut_cells], cell_hi[cut_cells])]
            for k in near.tolist():
                if len(clip_polygon(coords[k], core)):
                    raise HaloError(
                        f"halo thinner than cut front: cut cell {k} touches the core of submesh {j}; "
                        "the halo should be at least three background cells wide"
                    )
    return Classification(status, owner, hidden)


def partition_report(background, cls):
    """(visible, hidden, covered) areas of the background mesh."""
    areas = background.areas
    hid = float(sum(signed_polygon_area(p) for p in cls.hidden.values()))
    covered = float(areas[cls.status == COVERED].sum())
    cut_total = float(areas[cls.status == CUT].sum())
    uncut = float(areas[cls.status == UNCUT].sum())
    return uncut + cut_total - hid, hid, covered


# ---------------------------------------------------------------- point location


def point_locate(mesh, p, cells=None, tol=TOL):
    """Lowest-index cell whose closed triangle contains ``p``, or None."""
    cand = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    if len(cand) == 0:
        return None
    x = mesh.cell_coords(cand)
    lam = barycentric(x, np.asarray(p, dtype=float)[None, :].repeat(len(cand), axis=0))
    hit = np.flatnonzero(np.all(lam >= -tol, axis=1))
    if len(hit) == 0:
        return None
    return int(np.min(cand[hit]))


def barycentric(coords, pts):
    """Barycentric coordinates of ``pts`` (n, 2) in triangles ``coords`` (n, 3, 2)."""
    x0 = coords[:, 0]
    e1 = coords[:, 1] - x0
    e2 = coords[:, 2] - x0
    d = pts - x0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


# ---------------------------------------------------------------- interface segments


@dataclass
class InterfaceSegments:
    p0: np.ndarray
    p1: np.ndarray
    normal: np.ndarray       # unit, outward from the submesh
    facet: np.ndarray        # submesh facet index
    sub_cell: np.ndarray     # submesh cell adjacent to the facet
    bg_cell: np.ndarray      # background cell containing the segment
    h: float = 0.0

    def __len__(self):
        return len(self.facet)

    @property
    def length(self):
        return np.linalg.norm(self.p1 - self.p0, axis=1)

    @classmethod
    def empty(cls):
        z = np.zeros((0, 2))
        i = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, i, i, i)


def _segment_triangle_interval(a, b, tri):
    """Parameter interval [t0, t1] of segment a->b inside a CCW triangle, or None."""
    t0, t1 = 0.0, 1.0
    d = b - a
    for i in range(3):
        p = tri[i]
        e = tri[(i + 1) % 3] - p
        fa = e[0] * (a[1] - p[1]) - e[1] * (a[0] - p[0])
        fd = e[0] * d[1] - e[1] * d[0]
        scale = np.hypot(e[0], e[1])
        if abs(fd) <= TOL * scale * max(np.hypot(d[0], d[1]), 1e-300):
            if fa < -TOL * scale:
                return None
            continue
        t = -fa / fd
        if fd > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1 + 1e-12:
            return None
    return t0, t1


def outward_facet_normals(mesh, facets):
    """Unit normals of ``facets`` pointing away from their (first) adjacent cell."""
    out = np.zeros((len(facets), 2))
    cells = np.zeros(len(facets), dtype=np.int64)
    for n, f in enumerate(facets):
        a, b = mesh.facets[f]
        cs = mesh.facet_cells(f)
        if not cs:
            raise GeometryError(f"facet {f} is not an edge of any cell")
        c = cs[0]
        third = [v for v in mesh.cells[c] if v != a and v != b][0]
        t = mesh.vertices[b] - mesh.vertices[a]
        nrm = np.array([t[1], -t[0]]) / np.hypot(t[0], t[1])
        if np.dot(nrm, mesh.vertices[third] - mesh.vertices[a]) > 0:
            nrm = -nrm
        out[n] = nrm
        cells[n] = c
    return out, cells


def _mesh_index(mesh):
    coords = mesh.cell_coords()
    return BoxIndex(coords.min(axis=1), coords.max(axis=1))


def interface_segments(submesh, background, cls, h=None, index=None):
    """Split the submesh's marker-2 facets by the background cells they cross."""
    facets = submesh.facets_with(LAMBDA)
    normals, sub_cells = outward_facet_normals(submesh, facets)
    coords = background.cell_coords()
    index = _mesh_index(background) if index is None else index
    rows = []
    for f, nrm, sc in zip(facets.tolist(), normals, sub_cells.tolist()):
        a = submesh.vertices[submesh.facets[f, 0]]
        b = submesh.vertices[submesh.facets[f, 1]]
        cand = index.query(np.minimum(a, b), np.maximum(a, b))
        intervals = []
        for k in cand.tolist():
            iv = _segment_triangle_interval(a, b, coords[k])
            if iv is not None and iv[1] - iv[0] > 1e-12:
                intervals.append((k, iv[0], iv[1]))
        breaks = sorted({0.0, 1.0, *[t for _, t0, t1 in intervals for t in (t0, t1)]})
        merged = []
        for s0, s1 in zip(breaks[:-1], breaks[1:]):
            if s1 - s0 <= 1e-12:
                continue
            mid = 0.5 * (s0 + s1)
            owners = [k for k, t0, t1 in intervals if t0 - 1e-12 <= mid <= t1 + 1e-12]
            if not owners:
                raise GeometryError(f"interface facet {f} leaves the background mesh")
            k = min(owners)
            if merged and merged[-1][0] == k and abs(merged[-1][2] - s0) < 1e-12:
                merged[-1][2] = s1
            else:
                merged.append([k, s0, s1])
        for k, s0, s1 in merged:
            if cls.status[k] == COVERED:
                raise GeometryError(f"interface segment of facet {f} lies in covered cell {k}")
            rows.append((a + s0 * (b - a), a + s1 * (b - a), nrm, f, sc, k))
    if not rows:
        return InterfaceSegments.empty()
    p0, p1, nrm, fac, sc, bc = zip(*rows)
    if h is None:
        h = 0.5 * (background.h_max + submesh.h_max)
    return InterfaceSegments(np.array(p0), np.array(p1), np.array(nrm), np.array(fac),
                             np.array(sc), np.array(bc), h)


# ---------------------------------------------------------------- overlap pieces


@dataclass
class OverlapPieces:
    polygons: list
    bg_cell: np.ndarray
    sub_cell: np.ndarray
    area: np.ndarray

    def __len__(self):
        return len(self.polygons)


def overlap_pieces(submesh, background, cls, owner=None):
    """Split the hidden part of each cut background cell by submesh cells."""
    sub_coords = submesh.cell_coords()
    index = _mesh_index(submesh)
    sub_tris = {}
    polys, bgs, subs, areas = [], [], [], []
    for k in sorted(cls.hidden):
        if owner is not None and cls.owner[k] != owner:
            continue
        hid = cls.hidden[k]
        lo, hi = hid.min(axis=0), hid.max(axis=0)
        total = 0.0
        for c in index.query(lo, hi).tolist():
            if c not in sub_tris:
                sub_tris[c] = ConvexPolygon(sub_coords[c], check=False)
            piece = clip_polygon(hid, sub_tris[c])
            if len(piece) == 0:
                continue
            a = signed_polygon_area(piece)
            polys.append(piece)
            bgs.append(k)
            subs.append(c)
            areas.append(a)
            total += a
        target = signed_polygon_area(hid)
        if abs(total - target) > 1e-8 * max(target, 1e-14) + 1e-15:
            raise GeometryError(
                f"overlap pieces of cell {k} cover {total:.3e} of hidden area {target:.3e}"
            )
    return OverlapPieces(polys, np.array(bgs, dtype=np.int64), np.array(subs, dtype=np.int64), np.array(areas))


# ---------------------------------------------------------------- cut quadrature


@dataclass
class CutQuadrature:
    """Hidden-part quadrature per cut cell (points, weights)."""

    degree: int
    hidden: dict

    def hidden_area(self, k):
        return float(self.hidden[k][1].sum())


def cut_quadrature(cls, degree=4):
    return CutQuadrature(degree, {k: polygon_quadrature(p, degree) for k, p in cls.hidden.items()})


# ---------------------------------------------------------------- debug output


def write_classification_svg(background, cls, path, footprints=(), size=600):
    """Uncut / cut / covered cells in three fills, footprints outlined."""
    x = background.vertices
    lo = x.min(axis=0)
    span = float(np.max(x.max(axis=0) - lo)) or 1.0
    s = size / span

    def pt(p):
        return f"{(p[0] - lo[0]) * s:.3f},{size - (p[1] - lo[1]) * s:.3f}"

    fills = {UNCUT: "#dddddd", CUT: "#f4a261", COVERED: "#2a9d8f"}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    for k, tri in enumerate(background.cell_coords()):
        pts = " ".join(pt(p) for p in tri)
        out.append(f'<polygon points="{pts}" fill="{fills[int(cls.status[k])]}" stroke="black" stroke-width="0.3"/>')
    for fp in footprints:
        pts = " ".join(pt(p) for p in (fp.points if isinstance(fp, ConvexPolygon) else fp))
        out.append(f'<polygon points="{pts}" fill="none" stroke="red" stroke-width="1"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))

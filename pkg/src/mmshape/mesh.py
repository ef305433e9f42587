"""Triangle meshes: generators, rigid motions, quality and file I/O.

Facet markers are global:

    1   physical hole boundary (Gamma)
    2   outer submesh boundary (Lambda)
    3   metal/insulation interface
    4   insulation/fill interface
    10  exterior domain boundary
"""
from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

from .errors import MeshError, MeshFormatError

GAMMA = 1
LAMBDA = 2
GAMMA_I = 3
GAMMA_E = 4
EXTERIOR = 10

FILL = 0
INSULATION = 1
METAL = 2


@dataclass(eq=False)
class Mesh:
    """Immutable P1 triangle mesh.

    Cells are stored counter-clockwise; constructing a mesh with clockwise
    cells repairs them by swapping two indices.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_region: np.ndarray = None
    facets: np.ndarray = None
    facet_marker: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        cells = np.array(self.cells, dtype=np.int64).reshape(-1, 3)
        if self.cell_region is None:
            self.cell_region = np.zeros(len(cells), dtype=np.int64)
        self.cell_region = np.asarray(self.cell_region, dtype=np.int64).reshape(-1)
        if self.facets is None:
            self.facets = np.zeros((0, 2), dtype=np.int64)
        self.facets = np.asarray(self.facets, dtype=np.int64).reshape(-1, 2)
        if self.facet_marker is None:
            self.facet_marker = np.zeros(len(self.facets), dtype=np.int64)
        self.facet_marker = np.asarray(self.facet_marker, dtype=np.int64).reshape(-1)
        if len(self.cell_region) != len(cells) or len(self.facet_marker) != len(self.facets):
            raise MeshError("region/marker arrays do not match cell/facet counts")
        if len(cells) and (cells.min() < 0 or cells.max() >= len(self.vertices)):
            raise MeshError("cell references a missing vertex")
        if len(cells):
            a = _signed_areas(self.vertices, cells)
            flip = a < 0
            cells[flip] = cells[flip][:, [0, 2, 1]]
        self.cells = cells
        for arr in (self.vertices, self.cells, self.cell_region, self.facets, self.facet_marker):
            arr.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in (
                (self.vertices, other.vertices),
                (self.cells, other.cells),
                (self.cell_region, other.cell_region),
                (self.facets, other.facets),
                (self.facet_marker, other.facet_marker),
            )
        )

    __hash__ = None

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    def cell_coords(self, cells=None):
        """Vertex coordinates per cell, shape (m, 3, 2)."""
        c = self.cells if cells is None else self.cells[cells]
        return self.vertices[c]

    @cached_property
    def areas(self):
        return _signed_areas(self.vertices, self.cells)

    @cached_property
    def diameters(self):
        x = self.cell_coords()
        d = [np.linalg.norm(x[:, i] - x[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return np.max(d, axis=0)

    @property
    def h_max(self):
        return float(self.diameters.max())

    @cached_property
    def gradients(self):
        """Constant P1 basis gradients per cell, shape (m, 3, 2)."""
        return p1_gradients(self.cell_coords())

    @cached_property
    def edge_cells(self):
        """Map sorted vertex pair -> list of cells containing that edge."""
        table = {}
        for k, (a, b, c) in enumerate(self.cells.tolist()):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                table.setdefault(key, []).append(k)
        return table

    def facet_cells(self, facet):
        a, b = self.facets[facet]
        return self.edge_cells.get((min(a, b), max(a, b)), [])

    def facets_with(self, marker):
        return np.flatnonzero(self.facet_marker == marker)

    def marker_vertices(self, marker):
        return np.unique(self.facets[self.facet_marker == marker])

    def with_vertices(self, vertices):
        return Mesh(vertices, self.cells, self.cell_region, self.facets, self.facet_marker)

    def with_markers(self, facets, facet_marker):
        return Mesh(self.vertices, self.cells, self.cell_region, facets, facet_marker)


def _signed_areas(x, cells):
    p = x[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def p1_gradients(coords):
    """Gradients of the three barycentric basis functions on each triangle."""
    coords = np.asarray(coords, dtype=float)
    x0, x1, x2 = coords[:, 0], coords[:, 1], coords[:, 2]
    twice = (x1[:, 0] - x0[:, 0]) * (x2[:, 1] - x0[:, 1]) - (x1[:, 1] - x0[:, 1]) * (x2[:, 0] - x0[:, 0])
    g = np.empty(coords.shape)
    # grad phi_i = rot(x_{i+2} - x_{i+1}) / (2|K|)
    for i in range(3):
        a = coords[:, (i + 1) % 3]
        b = coords[:, (i + 2) % 3]
        g[:, i, 0] = (a[:, 1] - b[:, 1]) / twice
        g[:, i, 1] = (b[:, 0] - a[:, 0]) / twice
    return g


def signed_polygon_area(points):
    p = np.asarray(points, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(x[:-1] @ y[1:] - x[1:] @ y[:-1] + x[-1] * y[0] - x[0] * y[-1])


# ---------------------------------------------------------------- generators


def gen_rect_grid(x0, y0, x1, y1, nx, ny):
    """Crisscross grid: every quad split into four triangles through its centroid."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    if not (x1 > x0 and y1 > y0):
        raise MeshError("rectangle must have positive extent")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="xy")
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    vertices = np.vstack([corners, centers])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    sw = j * (nx + 1) + i
    se = sw + 1
    nw = sw + nx + 1
    ne = nw + 1
    c = len(corners) + j * nx + i
    cells = np.concatenate([
        np.column_stack([sw, se, c]),
        np.column_stack([se, ne, c]),
        np.column_stack([ne, nw, c]),
        np.column_stack([nw, sw, c]),
    ])
    order = np.argsort(np.tile(np.arange(nx * ny), 4), kind="stable")
    cells = cells[order]

    bottom = [(k, k + 1) for k in range(nx)]
    right = [(k * (nx + 1) + nx, (k + 1) * (nx + 1) + nx) for k in range(ny)]
    top = [(ny * (nx + 1) + k + 1, ny * (nx + 1) + k) for k in range(nx)]
    left = [((k + 1) * (nx + 1), k * (nx + 1)) for k in range(ny)]
    facets = np.array(bottom + right + top + left, dtype=np.int64)
    return Mesh(vertices, cells, None, facets, np.full(len(facets), EXTERIOR))


def gen_annulus(center, r_in, r_out, n_r, n_t):
    """Structured polar mesh between two circles; inner loop is Gamma, outer is Lambda."""
    if not 0 < r_in < r_out:
        raise MeshError("annulus requires 0 < r_in < r_out")
    return gen_ellipse_annulus(center, r_in, r_in, r_out, n_r, n_t)


def gen_ellipse_annulus(center, a, b, r_out, n_r, n_t, tilt=0.0, hole_offset=(0.0, 0.0)):
    """Structured mesh between an elliptic hole (semi-axes a, b) and a circle.

    The hole is centred at ``center + hole_offset`` and tilted by ``tilt``.
    Intermediate rings interpolate linearly between the ellipse and the
    circle at equal parameter angle.  ``n_t`` sets the polygon resolution of
    both loops.
    """
    ox, oy = hole_offset
    if not (0 < a and 0 < b and max(a, b) + math.hypot(ox, oy) < r_out):
        raise MeshError("ellipse must lie strictly inside the outer circle")
    if n_t < 8 or n_r < 1:
        raise MeshError("need n_t >= 8 and n_r >= 1")
    cx, cy = center
    t = 2 * np.pi * np.arange(n_t) / n_t
    ct, st = math.cos(tilt), math.sin(tilt)
    ex = a * np.cos(t)
    ey = b * np.sin(t)
    inner = np.column_stack([ct * ex - st * ey + ox, st * ex + ct * ey + oy])
    outer = r_out * np.column_stack([np.cos(t + tilt), np.sin(t + tilt)])
    rings = [inner + (outer - inner) * (k / n_r) for k in range(n_r + 1)]
    vertices = np.vstack(rings) + np.array([cx, cy])

    cells = []
    for k in range(n_r):
        for j in range(n_t):
            p = k * n_t + j
            q = k * n_t + (j + 1) % n_t
            r = p + n_t
            s = q + n_t
            cells.append((p, q, s))
            cells.append((p, s, r))
    j = np.arange(n_t)
    inner_f = np.column_stack([(j + 1) % n_t, j])
    outer_f = np.column_stack([n_r * n_t + j, n_r * n_t + (j + 1) % n_t])
    facets = np.vstack([inner_f, outer_f])
    markers = np.concatenate([np.full(n_t, 1), np.full(n_t, 2)])
    return Mesh(vertices, cells, None, facets, markers)


def _zip_rings(inner, outer, cells):
    """Triangulate between two concentric rings (index arrays ordered by angle from 0)."""
    na, nb = len(inner), len(outer)
    i = j = 0
    while i < na or j < nb:
        ta = (i + 1) / na
        tb = (j + 1) / nb
        if j >= nb or (i < na and ta <= tb):
            cells.append((inner[i % na], outer[j % nb], inner[(i + 1) % na]))
            i += 1
        else:
            cells.append((inner[i % na], outer[j % nb], outer[(j + 1) % nb]))
            j += 1


def gen_ring_disk(center, radii, regions, interface_markers, outer_marker, spacing):
    """Disk built from concentric rings with exact interfaces at ``radii``.

    ``regions[k]`` tags the annular layer between ``radii[k-1]`` and
    ``radii[k]`` (the first layer is the central disk).  ``interface_markers[k]``
    marks the loop at ``radii[k]`` for ``k < len(radii) - 1``; the outermost
    loop gets ``outer_marker``.
    """
    cx, cy = center
    ring_r = []
    ring_tag = []
    prev = 0.0
    for k, r in enumerate(radii):
        m = max(1, int(math.ceil((r - prev) / spacing - 1e-9)))
        for s in range(1, m + 1):
            ring_r.append(prev + (r - prev) * s / m)
            ring_tag.append(k)
        prev = r
    vertices = [(cx, cy)]
    rings = []
    for r in ring_r:
        n = max(6, int(round(2 * np.pi * r / spacing)))
        start = len(vertices)
        t = 2 * np.pi * np.arange(n) / n
        vertices.extend(zip(cx + r * np.cos(t), cy + r * np.sin(t)))
        rings.append(np.arange(start, start + n))
    cells = []
    regions_out = []
    first = rings[0]
    for a in range(len(first)):
        cells.append((0, first[a], first[(a + 1) % len(first)]))
    regions_out.extend([regions[ring_tag[0]]] * len(first))
    for k in range(1, len(rings)):
        before = len(cells)
        _zip_rings(rings[k - 1], rings[k], cells)
        regions_out.extend([regions[ring_tag[k]]] * (len(cells) - before))

    facets, markers = [], []
    boundary_ring = {}
    for k, r in enumerate(ring_r):
        if abs(r - radii[ring_tag[k]]) < 1e-14 * max(1.0, r):
            boundary_ring[ring_tag[k]] = k
    for idx in range(len(radii)):
        ring = rings[boundary_ring[idx]]
        marker = outer_marker if idx == len(radii) - 1 else interface_markers[idx]
        for a in range(len(ring)):
            facets.append((ring[a], ring[(a + 1) % len(ring)]))
            markers.append(marker)
    return Mesh(np.array(vertices), cells, regions_out, facets, markers)


def gen_cable_submesh(center, r_met, r_iso, r_halo, resolution):
    """Internal cable: metal core, insulation ring and a halo of fill material.

    ``resolution`` is the number of vertices on the outer (halo) circle; the
    same spacing is used throughout.  ``r_iso=None`` gives a bare metal core
    whose boundary with the fill carries marker 4.
    """
    if resolution < 8:
        raise MeshError("resolution must be at least 8")
    spacing = 2 * np.pi * r_halo / resolution
    if r_iso is None:
        if not 0 < r_met < r_halo:
            raise MeshError("cable radii must satisfy 0 < r_met < r_halo")
        return gen_ring_disk(center, [r_met, r_halo], [METAL, FILL], [GAMMA_E], LAMBDA, spacing)
    if not 0 < r_met < r_iso < r_halo:
        raise MeshError("cable radii must satisfy 0 < r_met < r_iso < r_halo")
    return gen_ring_disk(center, [r_met, r_iso, r_halo], [METAL, INSULATION, FILL],
                         [GAMMA_I, GAMMA_E], LAMBDA, spacing)


def gen_disk(center, radius, resolution, marker=EXTERIOR, region=FILL):
    """Single-region disk with ``resolution`` vertices on its boundary."""
    if radius <= 0 or resolution < 8:
        raise MeshError("disk requires radius > 0 and resolution >= 8")
    spacing = 2 * np.pi * radius / resolution
    return gen_ring_disk(center, [radius], [region], [], marker, spacing)


# ---------------------------------------------------------------- rigid motions


@dataclass(frozen=True)
class RigidPose:
    """v -> R(angle) (v - center) + center + translation."""

    rotation_angle: float = 0.0
    rotation_center: tuple = (0.0, 0.0)
    translation: tuple = (0.0, 0.0)

    def apply(self, points):
        p = np.asarray(points, dtype=float)
        if self.rotation_angle == 0.0 and self.translation == (0.0, 0.0):
            return p.copy()
        c = np.asarray(self.rotation_center, dtype=float)
        ct, st = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        d = p - c
        out = np.empty_like(d)
        out[..., 0] = ct * d[..., 0] - st * d[..., 1]
        out[..., 1] = st * d[..., 0] + ct * d[..., 1]
        return out + c + np.asarray(self.translation, dtype=float)

    def inverse(self):
        c = np.asarray(self.rotation_center, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        return RigidPose(-self.rotation_angle, tuple(c + t), tuple(-t))

    def rotated(self, dtheta):
        return RigidPose(self.rotation_angle + dtheta, self.rotation_center, self.translation)

    def translated(self, d):
        t = np.asarray(self.translation, dtype=float) + np.asarray(d, dtype=float)
        return RigidPose(self.rotation_angle, self.rotation_center, (float(t[0]), float(t[1])))


def apply_rigid(mesh, pose):
    if not all(np.isfinite(v) for v in (pose.rotation_angle, *pose.rotation_center, *pose.translation)):
        raise MeshError("pose must be finite")
    return mesh.with_vertices(pose.apply(mesh.vertices))


# ---------------------------------------------------------------- quality


def radius_ratios(mesh):
    """2 * inradius / circumradius for every cell (1 for equilateral)."""
    x = mesh.cell_coords()
    a = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
    b = np.linalg.norm(x[:, 2] - x[:, 0], axis=1)
    c = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
    area = np.abs(mesh.areas)
    s = 0.5 * (a + b + c)
    denom = s * a * b * c
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(denom > 0, 8.0 * area**2 / denom, 0.0)
    return np.clip(q, 0.0, 1.0)


def radius_ratio(mesh, cell):
    x = mesh.cell_coords([cell])[0]
    a = np.linalg.norm(x[1] - x[2])
    b = np.linalg.norm(x[2] - x[0])
    c = np.linalg.norm(x[0] - x[1])
    area = abs(0.5 * ((x[1, 0] - x[0, 0]) * (x[2, 1] - x[0, 1]) - (x[1, 1] - x[0, 1]) * (x[2, 0] - x[0, 0])))
    denom = 0.5 * (a + b + c) * a * b * c
    if denom <= 0:
        return 0.0
    return min(1.0, 8.0 * area * area / denom)


def mesh_quality(mesh):
    """Minimum radius ratio over all cells."""
    return float(radius_ratios(mesh).min())


# ---------------------------------------------------------------- boundary


@dataclass
class BoundaryLoop:
    vertices: np.ndarray     # closed: loop[i] -> loop[i+1], last wraps to first
    markers: np.ndarray      # marker of edge i (0 if unmarked)
    signed_area: float = field(default=0.0)

    def coords(self, mesh):
        return mesh.vertices[self.vertices]


def boundary_edges(mesh):
    """Directed boundary edges, oriented as in their single adjacent cell."""
    out = []
    for (u, v), cs in mesh.edge_cells.items():
        if len(cs) >= 3:
            raise MeshError(f"non-manifold edge ({u}, {v}) shared by {len(cs)} cells")
        if len(cs) == 1:
            a, b, c = mesh.cells[cs[0]]
            for p, q in ((a, b), (b, c), (c, a)):
                if {p, q} == {u, v}:
                    out.append((int(p), int(q)))
    return out


def boundary_loops(mesh):
    """Closed boundary loops; outer loops come out CCW, holes CW."""
    edges = boundary_edges(mesh)
    succ = {}
    for p, q in edges:
        if p in succ:
            raise MeshError(f"boundary vertex {p} is pinched")
        succ[p] = q
    marker_of = {}
    for (a, b), m in zip(mesh.facets.tolist(), mesh.facet_marker.tolist()):
        marker_of[(a, b)] = m
        marker_of[(b, a)] = m
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start:
            if cur in seen or cur not in succ:
                raise MeshError("boundary edges do not form closed loops")
            loop.append(cur)
            seen.add(cur)
            cur = succ[cur]
        idx = np.array(loop, dtype=np.int64)
        markers = np.array([marker_of.get((loop[i], loop[(i + 1) % len(loop)]), 0) for i in range(len(loop))])
        loops.append(BoundaryLoop(idx, markers, signed_polygon_area(mesh.vertices[idx])))
    return loops


# ---------------------------------------------------------------- file I/O


def write_mesh(mesh, path):
    lines = ["mmesh 1", f"vertices {mesh.num_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.num_cells}")
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.cells.tolist(), mesh.cell_region.tolist())]
    lines.append(f"facets {len(mesh.facets)}")
    lines += [f"{a} {b} {m}" for (a, b), m in zip(mesh.facets.tolist(), mesh.facet_marker.tolist())]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", pos + 1)
        pos += 1
        return lines[pos - 1].split()

    header = next_line()
    if len(header) != 2 or header[0] != "mmesh":
        raise MeshFormatError("expected 'mmesh <version>' header", 1)
    if header[1] != "1":
        raise MeshFormatError(f"unsupported mesh version {header[1]}", 1)

    def block(name, width, conv):
        tok = next_line()
        if len(tok) != 2 or tok[0] != name:
            raise MeshFormatError(f"expected '{name} <count>'", pos)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"bad {name} count {tok[1]!r}", pos) from None
        rows = []
        for _ in range(n):
            tok = next_line()
            if len(tok) != width:
                raise MeshFormatError(f"expected {width} values in {name} block", pos)
            try:
                rows.append([conv(t) for t in tok])
            except ValueError:
                raise MeshFormatError(f"unparsable {name} entry", pos) from None
        return rows

    verts = block("vertices", 2, float)
    cells = block("cells", 4, int)
    facets = block("facets", 3, int)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 4)
    facets = np.array(facets, dtype=np.int64).reshape(-1, 3)
    try:
        return Mesh(np.array(verts, dtype=float).reshape(-1, 2), cells[:, :3], cells[:, 3],
                    facets[:, :2], facets[:, 2])
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from None

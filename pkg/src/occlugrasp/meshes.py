"""Triangle meshes: watertight primitives, BVH ray casting, surface sampling, PLY I/O.

Rays against a mesh set go through a per-mesh bounding-volume hierarchy so
single-ray queries stay cheap even for finely tessellated catalogs. The
brute-force all-triangle path is kept (`ray_cast_brute`) as the oracle the
BVH is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError
from .geometry import PointCloud, Pose

_EPS = 1e-12


class TriMesh:
    """Immutable triangle mesh with outward per-face normals from winding."""

    def __init__(self, vertices, triangles):
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int32).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InputError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        self.vertices = v
        self.triangles = t

    @cached_property
    def face_normals(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        n = np.cross(b - a, c - a)
        lens = np.linalg.norm(n, axis=1)
        lens[lens == 0.0] = 1.0
        n = n / lens[:, None]
        n.flags.writeable = False
        return n

    @cached_property
    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        ar = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        ar.flags.writeable = False
        return ar

    @cached_property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bvh(self) -> "_Bvh":
        return _Bvh(self)

    @cached_property
    def contact_samples(self) -> PointCloud:
        # dense on-surface samples with normals, used by grasp contact checks
        return surface_sample(self, 2048, seed=0x5EED)

    def is_watertight(self) -> bool:
        """Every undirected edge shared by exactly two triangles."""
        edges: dict[tuple[int, int], int] = {}
        for tri in self.triangles:
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        return bool(edges) and all(c == 2 for c in edges.values())


# ---------------------------------------------------------------------------
# primitives (canonical pose: resting on z=0, centered in x/y)


def make_box(lx: float, ly: float, lz: float) -> TriMesh:
    hx, hy = lx / 2.0, ly / 2.0
    v = np.array(
        [
            [-hx, -hy, 0], [hx, -hy, 0], [hx, hy, 0], [-hx, hy, 0],
            [-hx, -hy, lz], [hx, -hy, lz], [hx, hy, lz], [-hx, hy, lz],
        ],
        dtype=float,
    )
    t = np.array(
        [
            [0, 2, 1], [0, 3, 2],          # bottom (outward -z)
            [4, 5, 6], [4, 6, 7],          # top
            [0, 1, 5], [0, 5, 4],          # -y side
            [1, 2, 6], [1, 6, 5],          # +x side
            [2, 3, 7], [2, 7, 6],          # +y side
            [3, 0, 4], [3, 4, 7],          # -x side
        ]
    )
    return TriMesh(v, t)


def _make_prism(footprint_xy: np.ndarray, height: float) -> TriMesh:
    """Extrude a convex CCW polygon footprint from z=0 to z=height."""
    n = len(footprint_xy)
    bottom = np.column_stack([footprint_xy, np.zeros(n)])
    top = np.column_stack([footprint_xy, np.full(n, height)])
    v = np.vstack([bottom, top, [[0, 0, 0]], [[0, 0, height]]])
    cb, ct = 2 * n, 2 * n + 1
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append([cb, j, i])            # bottom fan, outward -z
        tris.append([ct, n + i, n + j])    # top fan, outward +z
        tris.append([i, j, n + j])         # side
        tris.append([i, n + j, n + i])
    return TriMesh(v, np.array(tris))


def make_cylinder(radius: float, height: float, segments: int = 24) -> TriMesh:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    poly = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    return _make_prism(poly, height)


def make_hex_prism(circumradius: float, height: float) -> TriMesh:
    ang = 2.0 * np.pi * np.arange(6) / 6
    poly = circumradius * np.column_stack([np.cos(ang), np.sin(ang)])
    return _make_prism(poly, height)


def make_sphere(radius: float, rings: int = 12, segments: int = 16) -> TriMesh:
    """UV sphere with exact pole vertices, resting on z=0 (center at z=radius)."""
    verts = [[0.0, 0.0, 0.0]]  # south pole (on the table)
    for i in range(1, rings):
        phi = np.pi * i / rings
        z = radius - radius * math.cos(phi)
        r = radius * math.sin(phi)
        for j in range(segments):
            th = 2.0 * np.pi * j / segments
            verts.append([r * math.cos(th), r * math.sin(th), z])
    verts.append([0.0, 0.0, 2.0 * radius])  # north pole
    north = len(verts) - 1
    tris = []
    ring = lambda i, j: 1 + (i - 1) * segments + (j % segments)
    for j in range(segments):
        tris.append([0, ring(1, j + 1), ring(1, j)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, b, d])
            tris.append([a, d, c])
    for j in range(segments):
        tris.append([north, ring(rings - 1, j), ring(rings - 1, j + 1)])
    return TriMesh(np.array(verts), np.array(tris))


# ---------------------------------------------------------------------------
# ray casting


@dataclass(frozen=True)
class RayHit:
    distance: float
    instance_index: int
    surface_normal: np.ndarray


def _ray_triangles(origin, direction, v0, v1, v2):
    """Vectorized Moller-Trumbore; returns per-triangle t (inf on miss)."""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > _EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("j,ij->i", direction, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    good = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > 1e-9)
    return np.where(good, t, np.inf)


def ray_cast_brute(mesh: TriMesh, origin, direction) -> tuple[float, int]:
    """All-triangle nearest intersection: (t, face index) or (inf, -1)."""
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    v1 = mesh.vertices[mesh.triangles[:, 1]]
    v2 = mesh.vertices[mesh.triangles[:, 2]]
    t = _ray_triangles(np.asarray(origin, float), np.asarray(direction, float), v0, v1, v2)
    idx = int(np.argmin(t))
    return float(t[idx]), (idx if np.isfinite(t[idx]) else -1)


class _Bvh:
    """Median-split BVH over triangle centroids, flat arrays, stack traversal."""

    LEAF_SIZE = 4

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        tris = mesh.triangles
        v = mesh.vertices
        tv = v[tris]  # (m, 3, 3)
        self.tri_lo = tv.min(axis=1) - 1e-9  # pad against grazing-ray misses
        self.tri_hi = tv.max(axis=1) + 1e-9
        centroids = tv.mean(axis=1)
        m = len(tris)
        self.order = np.arange(m)
        # nodes: (lo, hi, left, right, start, count); leaf if count > 0
        self.nodes: list[list] = []
        if m:
            self._build(0, m, centroids)

    def _build(self, start: int, end: int, centroids) -> int:
        idx = self.order[start:end]
        lo = self.tri_lo[idx].min(axis=0)
        hi = self.tri_hi[idx].max(axis=0)
        node_id = len(self.nodes)
        self.nodes.append([lo, hi, -1, -1, start, 0])
        if end - start <= self.LEAF_SIZE:
            self.nodes[node_id][5] = end - start
            return node_id
        axis = int(np.argmax(hi - lo))
        key = centroids[idx][:, axis]
        local = np.argsort(key, kind="stable")
        self.order[start:end] = idx[local]
        mid = (start + end) // 2
        self.nodes[node_id][2] = self._build(start, mid, centroids)
        self.nodes[node_id][3] = self._build(mid, end, centroids)
        return node_id

    def ray_nearest(self, origin, direction) -> tuple[float, int]:
        if not self.nodes:
            return np.inf, -1
        origin = np.asarray(origin, float)
        direction = np.asarray(direction, float)
        safe = np.where(np.abs(direction) < 1e-12, np.copysign(1e-12, direction + 1e-300), direction)
        inv = 1.0 / safe
        best_t, best_face = np.inf, -1
        stack = [0]
        verts, tris = self.mesh.vertices, self.mesh.triangles
        while stack:
            node = self.nodes[stack.pop()]
            lo, hi, left, right, start, count = node
            t0 = (lo - origin) * inv
            t1 = (hi - origin) * inv
            tmin = np.minimum(t0, t1).max()
            tmax = np.maximum(t0, t1).min()
            if tmax < max(tmin, 0.0) or tmin > best_t:
                continue
            if count > 0:
                idx = self.order[start : start + count]
                tv = verts[tris[idx]]
                t = _ray_triangles(origin, direction, tv[:, 0], tv[:, 1], tv[:, 2])
                k = int(np.argmin(t))
                if t[k] < best_t:
                    best_t = float(t[k])
                    best_face = int(idx[k])
            else:
                stack.append(left)
                stack.append(right)
        return best_t, best_face


def ray_cast(mesh_set: list[tuple[TriMesh, Pose]], origin, direction) -> RayHit | None:
    """Nearest intersection of a world-space ray with a set of posed meshes."""
    if not mesh_set:
        raise InputError("mesh_set must be non-empty")
    direction = np.asarray(direction, dtype=float)
    n = float(np.linalg.norm(direction))
    if abs(n - 1.0) > 1e-6:
        raise InputError(f"direction must be unit length, norm={n}")
    origin = np.asarray(origin, dtype=float)
    best = None
    for i, (mesh, pose) in enumerate(mesh_set):
        inv = pose.inverse()
        o_local = inv.transform(origin)
        d_local = inv.rotate_only(direction)
        t, face = mesh.bvh.ray_nearest(o_local, d_local)
        if face >= 0 and (best is None or t < best[0]):
            best = (t, i, face, mesh, pose)
    if best is None:
        return None
    t, i, face, mesh, pose = best
    normal = pose.rotate_only(mesh.face_normals[face])
    return RayHit(distance=t, instance_index=i, surface_normal=normal)


# ---------------------------------------------------------------------------
# surface sampling


def surface_sample(mesh: TriMesh, count: int, seed: int) -> PointCloud:
    """Area-proportional on-surface samples with face normals.

    Per-triangle counts use largest-remainder allocation so density tracks
    area exactly; in-triangle positions are uniform via the seeded RNG.
    """
    if count < 1:
        raise InputError("count must be >= 1")
    areas = mesh.face_areas
    total = float(areas.sum())
    if total <= 0.0:
        raise InputError("mesh has zero surface area")
    quota = areas / total * count
    base = np.floor(quota).astype(int)
    rem = count - int(base.sum())
    if rem > 0:
        frac = quota - base
        extra = np.argsort(-frac, kind="stable")[:rem]
        base[extra] += 1
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pts = np.empty((count, 3))
    nrm = np.empty((count, 3))
    pos = 0
    tv = mesh.vertices[mesh.triangles]
    for f in np.nonzero(base)[0]:
        k = int(base[f])
        r1 = np.sqrt(rng.random(k))
        r2 = rng.random(k)
        a, b, c = tv[f, 0], tv[f, 1], tv[f, 2]
        p = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        pts[pos : pos + k] = p
        nrm[pos : pos + k] = mesh.face_normals[f]
        pos += k
    return PointCloud(pts, nrm)


# ---------------------------------------------------------------------------
# PLY I/O (ascii and binary little-endian; vertices + optional normals, faces)


def save_ply_mesh(path, mesh: TriMesh, binary: bool = True) -> None:
    _write_ply(path, mesh.vertices, None, mesh.triangles, binary)


def save_ply_cloud(path, cloud: PointCloud, binary: bool = True) -> None:
    _write_ply(path, cloud.points, cloud.normals, None, binary)


def _write_ply(path, verts, normals, faces, binary: bool) -> None:
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(verts)}"]
    header += ["property float x", "property float y", "property float z"]
    if normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        vdata = verts if normals is None else np.hstack([verts, normals])
        if binary:
            fh.write(vdata.astype("<f4").tobytes())
            if faces is not None:
                rec = np.empty(len(faces), dtype=[("n", "u1"), ("idx", "<i4", 3)])
                rec["n"] = 3
                rec["idx"] = faces
                fh.write(rec.tobytes())
        else:
            for row in vdata:
                fh.write((" ".join(f"{x:.9g}" for x in row) + "\n").encode("ascii"))
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


def _parse_ply_header(fh):
    line = fh.readline().strip()
    if line != b"ply":
        raise InputError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [props])
    while True:
        line = fh.readline()
        if not line:
            raise InputError("unexpected EOF in PLY header")
        tok = line.strip().split()
        if not tok or tok[0] == b"comment":
            continue
        if tok[0] == b"format":
            fmt = tok[1].decode()
        elif tok[0] == b"element":
            elements.append((tok[1].decode(), int(tok[2]), []))
        elif tok[0] == b"property":
            elements[-1][2].append([t.decode() for t in tok[1:]])
        elif tok[0] == b"end_header":
            break
    return fmt, elements


_PLY_SCALAR = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
               "int": "<i4", "int32": "<i4", "uchar": "u1", "uint8": "u1"}


def load_ply(path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Returns (vertices, normals or None, faces or None)."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        verts = normals = faces = None
        for name, count, props in elements:
            if name == "vertex":
                names = [p[-1] for p in props]
                if fmt == "ascii":
                    rows = [fh.readline().split() for _ in range(count)]
                    data = np.asarray(rows, dtype=float)
                else:
                    dtype = np.dtype([(p[-1], _PLY_SCALAR[p[0]]) for p in props])
                    raw = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype)
                    data = np.column_stack([raw[n].astype(float) for n in names])
                cols = {n: data[:, i] for i, n in enumerate(names)}
                verts = np.column_stack([cols["x"], cols["y"], cols["z"]])
                if all(k in cols for k in ("nx", "ny", "nz")):
                    normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
            elif name == "face":
                out = []
                if fmt == "ascii":
                    for _ in range(count):
                        tok = fh.readline().split()
                        if int(tok[0]) != 3:
                            raise InputError("only triangle faces supported")
                        out.append([int(tok[1]), int(tok[2]), int(tok[3])])
                else:
                    count_t = _PLY_SCALAR[props[0][1]]
                    idx_t = _PLY_SCALAR[props[0][2]]
                    csz = np.dtype(count_t).itemsize
                    isz = np.dtype(idx_t).itemsize
                    for _ in range(count):
                        n = int(np.frombuffer(fh.read(csz), dtype=count_t)[0])
                        if n != 3:
                            raise InputError("only triangle faces supported")
                        out.append(np.frombuffer(fh.read(isz * 3), dtype=idx_t).astype(int))
                faces = np.asarray(out, dtype=np.int32)
        if verts is None:
            raise InputError("PLY file has no vertex element")
        return verts, normals, faces


def load_ply_mesh(path) -> TriMesh:
    verts, _, faces = load_ply(path)
    if faces is None:
        raise InputError("PLY file has no faces; not a mesh")
    return TriMesh(verts, faces)


def load_ply_cloud(path) -> PointCloud:
    verts, normals, _ = load_ply(path)
    return PointCloud(verts, normals)

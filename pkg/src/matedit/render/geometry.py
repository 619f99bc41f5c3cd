"""Ray-intersectable geometry: sphere, axis-aligned box, ground plane and
triangle meshes behind a BVH.  All intersection routines are vectorized over
ray batches; misses report t = inf."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RAY_EPS = 1e-9
HIT_EPS = 1e-7


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, 1e-300)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - c
        t = np.full(len(origins), np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        near = np.where(t0 > HIT_EPS, t0, np.where(t1 > HIT_EPS, t1, np.inf))
        t[ok] = near[ok]
        normals = np.zeros_like(origins)
        hit = np.isfinite(t)
        p = origins[hit] + t[hit][:, None] * dirs[hit]
        normals[hit] = (p - self.center) / self.radius
        return t, normals

    def bounds(self):
        r = np.full(3, self.radius)
        return self.center - r, self.center + r


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    def intersect(self, origins, dirs):
        inv = 1.0 / np.where(np.abs(dirs) < RAY_EPS, np.copysign(RAY_EPS, dirs), dirs)
        t_lo = (self.lo - origins) * inv
        t_hi = (self.hi - origins) * inv
        t_near = np.minimum(t_lo, t_hi).max(axis=1)
        t_far = np.maximum(t_lo, t_hi).min(axis=1)
        t = np.where(t_near > HIT_EPS, t_near, np.where(t_far > HIT_EPS, t_far, np.inf))
        t = np.where(t_near <= t_far, t, np.inf)
        normals = np.zeros_like(origins)
        hit = np.isfinite(t)
        p = origins[hit] + t[hit][:, None] * dirs[hit]
        # Face of smallest distance wins the normal.
        d_lo = np.abs(p - self.lo)
        d_hi = np.abs(p - self.hi)
        dists = np.concatenate([d_lo, d_hi], axis=1)  # (-x,-y,-z,+x,+y,+z)
        face = np.argmin(dists, axis=1)
        axis = face % 3
        sign = np.where(face < 3, -1.0, 1.0)
        rows = np.nonzero(hit)[0]
        normals[rows, axis] = sign
        return t, normals

    def bounds(self):
        return self.lo.copy(), self.hi.copy()


@dataclass
class GroundPlane:
    """Infinite horizontal plane z = height with +z normal."""

    height: float = 0.0

    def intersect(self, origins, dirs):
        dz = dirs[:, 2]
        dz = np.where(np.abs(dz) < RAY_EPS, np.copysign(RAY_EPS, dz), dz)
        t = (self.height - origins[:, 2]) / dz
        t = np.where(t > HIT_EPS, t, np.inf)
        normals = np.zeros_like(origins)
        normals[:, 2] = 1.0
        return t, normals

    def bounds(self):
        big = 1e6
        return (np.array([-big, -big, self.height - 1e-3]),
                np.array([big, big, self.height + 1e-3]))


@dataclass
class _BVH:
    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray    # child index or -1 for leaf
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    order: np.ndarray   # triangle permutation


def _build_bvh(centroids: np.ndarray, tri_lo: np.ndarray, tri_hi: np.ndarray,
               leaf_size: int = 8) -> _BVH:
    n = len(centroids)
    order = np.arange(n)
    node_lo, node_hi, left, right, starts, counts = [], [], [], [], [], []

    def build(idx: np.ndarray) -> int:
        node = len(node_lo)
        node_lo.append(tri_lo[idx].min(axis=0))
        node_hi.append(tri_hi[idx].max(axis=0))
        left.append(-1); right.append(-1); starts.append(0); counts.append(0)
        if len(idx) <= leaf_size:
            starts[node] = build.cursor
            counts[node] = len(idx)
            order[build.cursor:build.cursor + len(idx)] = idx
            build.cursor += len(idx)
            return node
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        split = np.argsort(c[:, axis], kind="stable")
        half = len(idx) // 2
        left[node] = build(idx[split[:half]])
        right[node] = build(idx[split[half:]])
        return node

    build.cursor = 0
    build(np.arange(n))
    return _BVH(np.asarray(node_lo), np.asarray(node_hi),
                np.asarray(left), np.asarray(right),
                np.asarray(starts), np.asarray(counts), order)


@dataclass
class TriangleMesh:
    vertices: np.ndarray          # (V, 3)
    faces: np.ndarray             # (F, 3) int
    vertex_normals: np.ndarray = None  # (V, 3); computed if missing
    _bvh: _BVH = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        v0 = self.vertices[self.faces[:, 0]]
        v1 = self.vertices[self.faces[:, 1]]
        v2 = self.vertices[self.faces[:, 2]]
        self._v0, self._e1, self._e2 = v0, v1 - v0, v2 - v0
        fn = np.cross(self._e1, self._e2)
        self._face_normals = normalize(fn)
        if self.vertex_normals is None:
            vn = np.zeros_like(self.vertices)
            for k in range(3):  # area-weighted accumulation
                np.add.at(vn, self.faces[:, k], fn)
            self.vertex_normals = normalize(vn)
        else:
            self.vertex_normals = normalize(np.asarray(self.vertex_normals, dtype=np.float64))
        tri = self.vertices[self.faces]   # (F, 3, 3)
        lo, hi = tri.min(axis=1), tri.max(axis=1)
        self._bvh = _build_bvh(tri.mean(axis=1), lo, hi)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def _intersect_tris(self, tri_ids, origins, dirs, rows, best_t, best_tri, best_uv):
        """Moller-Trumbore on a (rows x tris) block, updating running bests."""
        o = origins[rows]
        d = dirs[rows]
        v0 = self._v0[tri_ids]; e1 = self._e1[tri_ids]; e2 = self._e2[tri_ids]
        pvec = np.cross(d[:, None, :], e2[None, :, :])
        det = np.einsum("mk,nmk->nm", e1, pvec)
        inv_det = np.where(np.abs(det) > 1e-12, 1.0 / det, 0.0)
        tvec = o[:, None, :] - v0[None, :, :]
        u = np.einsum("nmk,nmk->nm", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("nk,nmk->nm", d, qvec) * inv_det
        t = np.einsum("mk,nmk->nm", e2, qvec) * inv_det
        valid = ((np.abs(det) > 1e-12) & (u >= 0) & (v >= 0) & (u + v <= 1)
                 & (t > HIT_EPS) & (t < best_t[rows, None]))
        t = np.where(valid, t, np.inf)
        k = np.argmin(t, axis=1)
        tk = t[np.arange(len(rows)), k]
        improved = tk < best_t[rows]
        rr = rows[improved]
        best_t[rr] = tk[improved]
        best_tri[rr] = tri_ids[k[improved]]
        best_uv[rr, 0] = u[np.arange(len(rows)), k][improved]
        best_uv[rr, 1] = v[np.arange(len(rows)), k][improved]

    def intersect(self, origins, dirs):
        n = len(origins)
        best_t = np.full(n, np.inf)
        best_tri = np.full(n, -1, dtype=np.int64)
        best_uv = np.zeros((n, 2))
        inv = 1.0 / np.where(np.abs(dirs) < RAY_EPS, np.copysign(RAY_EPS, dirs), dirs)
        bvh = self._bvh
        stack = [0]
        while stack:
            node = stack.pop()
            t_lo = (bvh.node_lo[node] - origins) * inv
            t_hi = (bvh.node_hi[node] - origins) * inv
            t_near = np.minimum(t_lo, t_hi).max(axis=1)
            t_far = np.maximum(t_lo, t_hi).min(axis=1)
            alive = (t_near <= t_far) & (t_far > HIT_EPS) & (t_near < best_t)
            if not alive.any():
                continue
            if bvh.left[node] < 0:
                start, count = bvh.leaf_start[node], bvh.leaf_count[node]
                tri_ids = bvh.order[start:start + count]
                self._intersect_tris(tri_ids, origins, dirs, np.nonzero(alive)[0],
                                     best_t, best_tri, best_uv)
            else:
                stack.append(int(bvh.left[node]))
                stack.append(int(bvh.right[node]))
        normals = np.zeros_like(origins)
        hit = best_tri >= 0
        if hit.any():
            f = self.faces[best_tri[hit]]
            u = best_uv[hit, 0][:, None]
            v = best_uv[hit, 1][:, None]
            vn = self.vertex_normals
            sm = (vn[f[:, 0]] * (1 - u - v) + vn[f[:, 1]] * u + vn[f[:, 2]] * v)
            normals[hit] = normalize(sm)
        return best_t, normals


# --- Procedural meshes --------------------------------------------------------

def make_icosphere(subdivisions: int = 2, radius: float = 1.0,
                   bump_amplitude: float = 0.0, rng: np.random.Generator = None):
    """Subdivided icosahedron, optionally displaced by smooth radial bumps."""
    phi = (1 + 5**0.5) / 2
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts = normalize(verts)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple, int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = normalize(np.array([(verts[i][k] + verts[j][k]) / 2 for k in range(3)]))
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts, dtype=np.float64)
    if bump_amplitude > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        freqs = rng.uniform(1.0, 3.0, size=(3, 3))
        phases = rng.uniform(0, 2 * np.pi, size=3)
        disp = np.zeros(len(v))
        for k in range(3):
            disp += np.sin(v @ freqs[k] * 2.0 + phases[k])
        v = v * (1.0 + bump_amplitude * disp / 3.0)[:, None]
    return TriangleMesh(v * radius, np.asarray(faces, dtype=np.int64))

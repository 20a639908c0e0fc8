"""Limb-end contact model: friction pyramids, grasp matrix, support polygon.

Each contact is a polygon of vertices with a friction pyramid per vertex; the
pyramid's K ridge (edge) directions generate the cone of admissible point
forces.  Stacking p x rho moment rows under the ridge directions gives the
grasp matrix G: any nonnegative combination lambda >= 0 yields a feasible
resultant wrench w = G lambda (moments about the world origin).  Grasp-mode
contacts (hands on rungs/rails) mirror the pyramid about the surface so the
limb can also pull.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContactMode",
    "ContactSpec",
    "DEFAULT_MARGIN",
    "EmptyContactSet",
    "GraspMatrix",
    "NoSupportingContact",
    "assemble_grasp_matrix",
    "convex_hull_2d",
    "polygon_margin",
    "ridge_vectors",
    "shrink_polygon",
    "support_polygon",
]

#: Default inner margin (m) applied to contact polygons for wrench distribution.
DEFAULT_MARGIN = 0.02


class EmptyContactSet(ValueError):
    """Grasp-matrix assembly was asked to run on zero contacts."""


class NoSupportingContact(ValueError):
    """No unilateral contact with an upward normal to build a support polygon from."""


class ContactMode(enum.Enum):
    UNILATERAL = "unilateral"  # push only (feet, palms on walls)
    GRASP = "grasp"            # mirrored pyramids, pulling allowed (rungs, rails)


@dataclass(frozen=True)
class ContactSpec:
    """One limb-end contact: polygon vertices plus friction-pyramid geometry.

    vertices are world-frame points (m); contact_normal and the two
    tangent_basis vectors form an orthonormal surface frame.  Unilateral
    vertices must be coplanar (within 1e-6 m along the normal).
    """

    limb_id: str
    vertices: np.ndarray
    contact_normal: np.ndarray
    tangent_basis: np.ndarray
    friction_coeff: float
    mode: ContactMode = ContactMode.UNILATERAL
    ridge_count_per_vertex: int = 4

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        if verts.shape[0] < 1:
            raise ValueError(f"{self.limb_id}: contact needs at least one vertex")
        n = np.asarray(self.contact_normal, dtype=float).reshape(3)
        t = np.asarray(self.tangent_basis, dtype=float).reshape(2, 3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"{self.limb_id}: contact_normal must be a unit vector")
        for k in range(2):
            if abs(np.linalg.norm(t[k]) - 1.0) > 1e-9:
                raise ValueError(f"{self.limb_id}: tangent {k} must be a unit vector")
            if abs(float(n @ t[k])) > 1e-9:
                raise ValueError(f"{self.limb_id}: tangent {k} not perpendicular to normal")
        if abs(float(t[0] @ t[1])) > 1e-9:
            raise ValueError(f"{self.limb_id}: tangents must be orthogonal")
        if not (np.isfinite(self.friction_coeff) and self.friction_coeff > 0.0):
            raise ValueError(f"{self.limb_id}: friction_coeff must be > 0")
        if int(self.ridge_count_per_vertex) < 4:
            raise ValueError(f"{self.limb_id}: ridge_count_per_vertex must be >= 4")
        if self.mode is ContactMode.UNILATERAL and verts.shape[0] > 1:
            along = (verts - verts[0]) @ n
            if np.max(np.abs(along)) > 1e-6:
                raise ValueError(
                    f"{self.limb_id}: unilateral vertices deviate "
                    f"{np.max(np.abs(along)):.2e} m from the contact plane"
                )
        verts.flags.writeable = False
        n.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "contact_normal", n)
        object.__setattr__(self, "tangent_basis", t)
        object.__setattr__(self, "friction_coeff", float(self.friction_coeff))
        object.__setattr__(self, "ridge_count_per_vertex", int(self.ridge_count_per_vertex))
        cen = verts.mean(axis=0)
        cen.flags.writeable = False
        object.__setattr__(self, "_centroid", cen)

    @property
    def centroid(self) -> np.ndarray:
        return self._centroid

    def shrunk(self, margin: float) -> "ContactSpec":
        """Copy with each vertex moved `margin` meters toward the centroid.

        Vertices closer to the centroid than the margin collapse onto it.
        Used for wrench distribution (keeps pressure off polygon edges);
        support polygons stay unshrunk.
        """
        if margin <= 0.0 or self.vertices.shape[0] == 1:
            return self
        c = self.centroid
        out = np.empty_like(self.vertices)
        for i, v in enumerate(self.vertices):
            d = c - v
            dist = np.linalg.norm(d)
            out[i] = c if dist <= margin else v + d * (margin / dist)
        return ContactSpec(
            limb_id=self.limb_id,
            vertices=out,
            contact_normal=self.contact_normal,
            tangent_basis=self.tangent_basis,
            friction_coeff=self.friction_coeff,
            mode=self.mode,
            ridge_count_per_vertex=self.ridge_count_per_vertex,
        )


def ridge_vectors(normal, tangents, mu: float, K: int) -> np.ndarray:
    """K unit ridge directions of the friction pyramid around `normal`.

        rho_k = normalize(n + mu (cos th_k t1 + sin th_k t2)), th_k = 2 pi k / K

    Every ridge satisfies the cone inclusion rho . n = 1/sqrt(1 + mu^2) and
    has tangential/normal magnitude ratio exactly mu.
    """
    if K < 4:
        raise ValueError(f"need at least 4 ridge directions, got {K}")
    if not (np.isfinite(mu) and mu > 0.0):
        raise ValueError(f"friction coefficient must be > 0, got {mu}")
    n = np.asarray(normal, dtype=float).reshape(3)
    t = np.asarray(tangents, dtype=float).reshape(2, 3)
    theta = 2.0 * np.pi * np.arange(K) / K
    raw = n[None, :] + mu * (np.cos(theta)[:, None] * t[0] + np.sin(theta)[:, None] * t[1])
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


@dataclass(frozen=True)
class GraspMatrix:
    """Assembled 6xN grasp matrix with per-limb column bookkeeping.

    Rows: force (3) then moment about the world origin (3).  block_index maps
    limb_id -> (start, stop) column range.  gram is G'G, cached because the
    NNLS solver works on normal equations and the matrix is reused across
    control steps within a contact phase.
    """

    columns: np.ndarray
    block_index: dict

    def __post_init__(self):
        cols = np.ascontiguousarray(np.asarray(self.columns, dtype=float))
        if cols.ndim != 2 or cols.shape[0] != 6 or cols.shape[1] < 1:
            raise ValueError(f"grasp matrix must be 6xN, got {cols.shape}")
        cols.flags.writeable = False
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "block_index", dict(self.block_index))

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]

    @functools.cached_property
    def gram(self) -> np.ndarray:
        g = self.columns.T @ self.columns
        g.flags.writeable = False
        return g

    def limb_columns(self, limb_id: str) -> np.ndarray:
        lo, hi = self.block_index[limb_id]
        return self.columns[:, lo:hi]


def assemble_grasp_matrix(contacts) -> GraspMatrix:
    """Stack per-contact ridge columns into the grasp matrix.

    Column order is (limb, vertex, ridge); grasp-mode contacts append a
    mirrored pyramid (normal negated) after each vertex's primary ridges, so
    the conic hull spans pulling forces too.  Moments are about the world
    origin: the moment rows of a column at vertex p with ridge rho are p x rho.
    """
    contacts = list(contacts)
    if not contacts:
        raise EmptyContactSet("no contacts to assemble")
    blocks = []
    index = {}
    start = 0
    for c in contacts:
        K = c.ridge_count_per_vertex
        ridges = ridge_vectors(c.contact_normal, c.tangent_basis, c.friction_coeff, K)
        if c.mode is ContactMode.GRASP:
            mirrored = ridge_vectors(-c.contact_normal, c.tangent_basis, c.friction_coeff, K)
            ridges = np.vstack([ridges, mirrored])
        per_vertex = ridges.shape[0]
        block = np.empty((6, c.vertices.shape[0] * per_vertex))
        col = 0
        for p in c.vertices:
            block[:3, col:col + per_vertex] = ridges.T
            block[3:, col:col + per_vertex] = np.cross(p[None, :], ridges).T
            col += per_vertex
        blocks.append(block)
        index[c.limb_id] = (start, start + block.shape[1])
        start += block.shape[1]
    return GraspMatrix(columns=np.hstack(blocks), block_index=index)


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull of 2D points by monotone chain, counter-clockwise.

    Degenerate inputs are handled: one point -> itself, collinear points ->
    the two extreme endpoints.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if pts.shape[0] <= 2:
        return pts
    # lexicographic sort, then build lower and upper chains
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:  # all collinear: keep the two extremes
        return np.array([pts[0], pts[-1]])
    return hull


def support_polygon(contacts) -> np.ndarray:
    """Convex hull of the ground-plane (xy) projections of supporting contacts.

    Supporting means unilateral with an upward normal component.  Returns an
    (M, 2) vertex array (CCW for a proper polygon; 2 points for a line
    segment, 1 for a single toe point).
    """
    pts = []
    for c in contacts:
        if c.mode is ContactMode.UNILATERAL and c.contact_normal[2] > 0.0:
            pts.append(c.vertices[:, :2])
    if not pts:
        raise NoSupportingContact("no unilateral contact with an upward normal")
    return convex_hull_2d(np.vstack(pts))


def shrink_polygon(polygon: np.ndarray, margin: float) -> np.ndarray:
    """Move polygon vertices `margin` meters toward the centroid (same rule
    as ContactSpec.shrunk, for the support-region margin check)."""
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if margin <= 0.0 or poly.shape[0] == 1:
        return poly.copy()
    c = poly.mean(axis=0)
    out = np.empty_like(poly)
    for i, v in enumerate(poly):
        d = c - v
        dist = np.linalg.norm(d)
        out[i] = c if dist <= margin else v + d * (margin / dist)
    return out


def polygon_margin(polygon: np.ndarray, point) -> float:
    """Signed distance from `point` to the polygon boundary (positive inside).

    For a segment or single point, returns minus the distance to it (nothing
    is strictly inside a degenerate polygon).
    """
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    p = np.asarray(point, dtype=float).reshape(2)
    if poly.shape[0] == 1:
        return -float(np.linalg.norm(p - poly[0]))
    if poly.shape[0] == 2:
        return -_point_segment_distance(p, poly[0], poly[1])
    margin = np.inf
    inside = True
    m = poly.shape[0]
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        edge = b - a
        # CCW polygon: inside points are to the left of every edge
        s = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])
        if s < 0.0:
            inside = False
        margin = min(margin, _point_segment_distance(p, a, b))
    return margin if inside else -margin


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))

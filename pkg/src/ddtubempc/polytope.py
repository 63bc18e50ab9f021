"""Convex polytope computations in halfspace representation.

Every set is stored as ``{x : G x <= g}`` with ``G`` of shape
``(n_rows, dim)``.  Vertex representations are computed on demand (via the
polar-dual convex hull of a Chebyshev-centred copy) and cached, so
vertex-based operations such as Minkowski sums and affine images stay exact
for degenerate (lower-dimensional) sets as well.

All linear programs are solved with the HiGHS backend of
:func:`scipy.optimize.linprog`.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

logger = logging.getLogger(__name__)

__all__ = [
    "HPolytope",
    "PolytopeError",
    "EmptySetError",
    "UnboundedSetError",
    "ProjectionLimitError",
    "pontryagin_diff",
    "minkowski_sum",
    "affine_image",
    "project",
    "convex_hull_union",
    "vertex_hull",
    "set_equal",
]

#: Absolute tolerance for set comparisons, applied to unit-norm rows.
DEFAULT_TOL = 1e-8

#: Relative singular-value cutoff when detecting the affine dimension of a
#: vertex cloud.
_RANK_RTOL = 1e-9

#: Hard cap on intermediate row counts during variable elimination.
FM_ROW_CAP = 50_000


class PolytopeError(Exception):
    """Base class for polytope computation failures."""


class EmptySetError(PolytopeError):
    """An operation required a nonempty set but the set is empty."""


class UnboundedSetError(PolytopeError):
    """An operation required a bounded value but the LP is unbounded."""


class ProjectionLimitError(PolytopeError):
    """Variable elimination exceeded the configured row budget."""


def _lp(c, G=None, h=None, A_eq=None, b_eq=None):
    """Solve ``min c @ x`` subject to ``G x <= h``, ``A_eq x = b_eq``."""
    return linprog(
        c,
        A_ub=G,
        b_ub=h,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(None, None),
        method="highs",
    )


class HPolytope:
    """Polytope ``{x : G x <= g}`` in halfspace representation.

    Instances are treated as immutable: every operation returns a new
    polytope.  The vertex representation is cached on first use.

    Attributes:
        G: Row-constraint matrix, shape ``(n_rows, dim)``.
        g: Offsets, shape ``(n_rows,)``.
    """

    def __init__(self, G, g):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        g = np.asarray(g, dtype=float).ravel()
        if G.ndim != 2:
            raise ValueError(f"G must be 2-D, got shape {G.shape}")
        if G.shape[0] != g.shape[0]:
            raise ValueError(
                f"row mismatch: G has {G.shape[0]} rows, g has {g.shape[0]}"
            )
        if G.shape[0] == 0:
            raise ValueError("a polytope needs at least one row")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
            raise ValueError("G and g must be finite")
        self.G = G
        self.g = g
        self._verts: np.ndarray | None = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @classmethod
    def box(cls, lower, upper) -> "HPolytope":
        """Axis-aligned box ``{x : lower <= x <= upper}``."""
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper")
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def from_vertices(cls, V) -> "HPolytope":
        """Convex hull of a point cloud (rows of ``V``)."""
        return vertex_hull(V)

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    @property
    def dim(self) -> int:
        """Ambient dimension."""
        return self.G.shape[1]

    @property
    def n_rows(self) -> int:
        """Number of halfspace rows."""
        return self.G.shape[0]

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"HPolytope(dim={self.dim}, rows={self.n_rows})"

    def normalized(self) -> "HPolytope":
        """Copy with every row scaled to unit norm.

        Raises:
            PolytopeError: If a row has (numerically) zero norm and a
                negative offset, which encodes an empty set that cannot be
                normalized.
        """
        norms = np.linalg.norm(self.G, axis=1)
        zero = norms <= 1e-14
        if np.any(zero):
            if np.any(self.g[zero] < -1e-14):
                raise PolytopeError("cannot normalize an empty-marker row")
            keep = ~zero
            if not np.any(keep):
                raise PolytopeError("all rows are trivial; nothing to normalize")
            G, g, norms = self.G[keep], self.g[keep], norms[keep]
        else:
            G, g = self.G, self.g
        out = HPolytope(G / norms[:, None], g / norms)
        out._verts = self._verts
        return out

    def support(self, direction) -> float:
        """Support value ``max {direction @ x : x in P}``.

        Raises:
            UnboundedSetError: If the LP is unbounded along ``direction``.
            EmptySetError: If the polytope is empty.
        """
        d = np.asarray(direction, dtype=float).ravel()
        res = _lp(-d, self.G, self.g)
        if res.status == 0:
            return float(-res.fun)
        if res.status == 3:
            raise UnboundedSetError("support is unbounded along this direction")
        if res.status == 2:
            raise EmptySetError("support of an empty set is undefined")
        raise PolytopeError(f"support LP failed: {res.message}")

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        """Membership test with tolerance measured on unit-norm rows."""
        x = np.asarray(x, dtype=float).ravel()
        norms = np.maximum(np.linalg.norm(self.G, axis=1), 1e-14)
        return bool(np.all((self.G @ x - self.g) / norms <= tol))

    def contains_set(self, other: "HPolytope", tol: float = DEFAULT_TOL) -> bool:
        """Check ``other ⊆ self`` via support values along ``self``'s rows.

        An empty ``other`` is contained in everything.  If ``other`` is
        unbounded along one of the rows the inclusion fails (returns
        False rather than raising).
        """
        norms = np.maximum(np.linalg.norm(self.G, axis=1), 1e-14)
        try:
            for row, off, nrm in zip(self.G, self.g, norms):
                if other.support(row) > off + tol * nrm:
                    return False
        except EmptySetError:
            return True
        except UnboundedSetError:
            return False
        return True

    def is_empty(self) -> bool:
        """Feasibility check via a zero-objective LP."""
        res = _lp(np.zeros(self.dim), self.G, self.g)
        return res.status == 2

    def chebyshev_center(self) -> tuple[np.ndarray, float]:
        """Largest-inscribed-ball center and radius.

        Returns:
            Tuple ``(center, radius)``.

        Raises:
            EmptySetError: If the polytope is empty.
        """
        norms = np.linalg.norm(self.G, axis=1)
        n = self.dim
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.G, norms[:, None]])
        # cap the radius so the LP stays bounded for unbounded polytopes
        cap = np.zeros(n + 1)
        cap[-1] = 1.0
        A = np.vstack([A, cap])
        b = np.concatenate([self.g, [1e12]])
        res = _lp(c, A, b)
        if res.status == 2 or (res.status == 0 and res.x[-1] < 0):
            raise EmptySetError("empty polytope has no Chebyshev center")
        if res.status != 0:
            raise PolytopeError(f"Chebyshev LP failed: {res.message}")
        return res.x[:n].copy(), float(res.x[-1])

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise bounds ``(lower, upper)`` via 2*dim support LPs.

        Raises:
            EmptySetError: If the polytope is empty.
            UnboundedSetError: If some coordinate is unbounded.
        """
        n = self.dim
        lo = np.empty(n)
        hi = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            hi[i] = self.support(e)
            lo[i] = -self.support(-e)
        return lo, hi

    def intersect(self, other: "HPolytope") -> "HPolytope":
        """Intersection by stacking rows."""
        if other.dim != self.dim:
            raise ValueError(
                f"dimension mismatch: {self.dim} vs {other.dim}"
            )
        return HPolytope(
            np.vstack([self.G, other.G]), np.concatenate([self.g, other.g])
        )

    def __and__(self, other: "HPolytope") -> "HPolytope":
        return self.intersect(other)

    # ------------------------------------------------------------------
    # simplification
    # ------------------------------------------------------------------
    def _deduplicated(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-norm rows with duplicates/dominated rows merged."""
        norms = np.linalg.norm(self.G, axis=1)
        keep = norms > 1e-14
        if np.any(self.g[~keep] < -1e-9):
            # an infeasible zero row encodes the empty set; keep the marker
            return np.zeros((1, self.dim)), np.array([-1.0])
        G = self.G[keep] / norms[keep, None]
        g = self.g[keep] / norms[keep]
        if G.shape[0] == 0:
            return self.G.copy(), self.g.copy()
        order = {}
        for row, off in zip(G, g):
            key = tuple(np.round(row, 10))
            if key not in order or off < order[key][1]:
                order[key] = (row, off)
        rows = np.array([v[0] for v in order.values()])
        offs = np.array([v[1] for v in order.values()])
        return rows, offs

    def remove_redundancy(self, tol: float = 1e-9) -> "HPolytope":
        """Drop rows that never bind, leaving an irredundant description.

        Large systems are first thinned by sound bulk filters (bounding-box
        slack and constraint generation against a growing working set), then
        finished with one exact LP per surviving row.
        """
        G, g = self._deduplicated()
        m, n = G.shape
        if m <= 1:
            return HPolytope(G, g)
        if m > 4 * n + 8:
            thinned = _bulk_irredundant(G, g, tol)
            if thinned is None:
                # empty set: keep the representation as-is
                return HPolytope(G, g)
            G, g = thinned
            m = G.shape[0]
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if keep.sum() == 1:
                break
            if not keep[i]:
                continue
            mask = keep.copy()
            mask[i] = False
            A = np.vstack([G[mask], G[i]])
            b = np.concatenate([g[mask], [g[i] + 1.0]])
            res = _lp(-G[i], A, b)
            if res.status == 0 and -res.fun <= g[i] + tol:
                keep[i] = False
            elif res.status == 2:
                # empty set: keep the representation as-is
                return HPolytope(G, g)
        return HPolytope(G[keep], g[keep])

    # ------------------------------------------------------------------
    # vertex representation
    # ------------------------------------------------------------------
    def vertices(self) -> np.ndarray:
        """Vertices as rows, computed on demand and cached.

        Raises:
            EmptySetError: If the polytope is empty.
            UnboundedSetError: If the polytope is unbounded.
        """
        if self._verts is None:
            lo, hi = self.bounding_box()
            scale = max(1.0, float(np.max(np.abs(np.concatenate([lo, hi])))))
            self._verts = _enumerate_vertices(self.G, self.g, scale)
        return self._verts

    def with_vertices(self, V: np.ndarray) -> "HPolytope":
        """Copy with a precomputed vertex cache (internal use)."""
        out = HPolytope(self.G, self.g)
        out._verts = np.asarray(V, dtype=float)
        return out


# ----------------------------------------------------------------------
# vertex enumeration internals
# ----------------------------------------------------------------------
def _dedup_points(V: np.ndarray, scale: float) -> np.ndarray:
    decimals = max(0, int(9 - np.log10(max(scale, 1.0))))
    _, idx = np.unique(np.round(V, decimals), axis=0, return_index=True)
    return V[np.sort(idx)]


def _enumerate_vertices(G: np.ndarray, g: np.ndarray, scale: float) -> np.ndarray:
    """Vertices of a bounded, nonempty ``{x: Gx <= g}``."""
    n = G.shape[1]
    if n == 1:
        col = G[:, 0]
        ub = np.inf
        lb = -np.inf
        for c, off in zip(col, g):
            if c > 1e-14:
                ub = min(ub, off / c)
            elif c < -1e-14:
                lb = max(lb, off / c)
        if not (np.isfinite(lb) and np.isfinite(ub)):
            raise UnboundedSetError("interval is unbounded")
        if ub < lb - 1e-12 * scale:
            raise EmptySetError("interval is empty")
        if ub - lb <= 1e-12 * scale:
            return np.array([[0.5 * (lb + ub)]])
        return np.array([[lb], [ub]])

    P = HPolytope(G, g)
    center, radius = P.chebyshev_center()
    if radius > 1e-9 * scale:
        V = _dual_hull_vertices(G, g, center)
        if V is not None:
            resid = (G @ V.T - g[:, None]) / np.maximum(
                np.linalg.norm(G, axis=1), 1e-14
            )[:, None]
            if np.max(resid) <= 1e-6 * scale:
                return _dedup_points(V, scale)
    return _lower_dimensional_vertices(G, g, scale)


def _dual_hull_vertices(
    G: np.ndarray, g: np.ndarray, center: np.ndarray
) -> np.ndarray | None:
    """Vertices of a full-dimensional polytope via its polar dual."""
    slack = g - G @ center
    if np.any(slack <= 1e-12):
        return None
    D = G / slack[:, None]
    try:
        hull = ConvexHull(D)
    except QhullError:
        try:
            hull = ConvexHull(D, qhull_options="QJ")
        except QhullError:
            return None
    normals = hull.equations[:, :-1]
    offsets = hull.equations[:, -1]
    if np.any(offsets > -1e-12):
        return None
    return center + normals / (-offsets[:, None])


def _lower_dimensional_vertices(
    G: np.ndarray, g: np.ndarray, scale: float
) -> np.ndarray:
    """Vertices of a polytope with empty interior.

    Detects implicit equality rows (rows tight on the whole set), reduces
    onto the corresponding affine subspace and recurses.
    """
    norms = np.maximum(np.linalg.norm(G, axis=1), 1e-14)
    Gn = G / norms[:, None]
    gn = g / norms
    eq_tol = 1e-7 * max(1.0, scale)
    eq_mask = np.zeros(len(gn), dtype=bool)
    for i, row in enumerate(Gn):
        res = _lp(row, G, g)
        if res.status != 0:
            continue
        if gn[i] - float(res.fun) <= eq_tol:
            eq_mask[i] = True
    if not np.any(eq_mask):
        raise PolytopeError(
            "degenerate polytope without detectable implicit equalities"
        )
    E = Gn[eq_mask]
    f = gn[eq_mask]
    x_p, *_ = np.linalg.lstsq(E, f, rcond=None)
    N = null_space(E)
    if N.shape[1] == 0:
        return x_p[None, :]
    Gz = Gn[~eq_mask] @ N
    gz = gn[~eq_mask] - Gn[~eq_mask] @ x_p
    row_norms = np.linalg.norm(Gz, axis=1)
    keep = row_norms > 1e-10
    if np.any(gz[~keep] < -1e-8):
        raise EmptySetError("inconsistent constraints on the affine subspace")
    if not np.any(keep):
        raise UnboundedSetError(
            "no constraints remain on the affine subspace"
        )
    Vz = HPolytope(Gz[keep], gz[keep]).vertices()
    return x_p[None, :] + Vz @ N.T


# ----------------------------------------------------------------------
# vertex -> halfspace conversion
# ----------------------------------------------------------------------
def vertex_hull(V) -> HPolytope:
    """Halfspace representation of the convex hull of a point cloud.

    Handles point clouds of any affine dimension: lower-dimensional hulls
    are represented with paired inequality rows along the orthogonal
    complement, so images under rank-deficient maps stay exact.

    Args:
        V: Points as rows, shape ``(n_points, dim)``.

    Returns:
        The hull as an :class:`HPolytope` with its vertex cache populated.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.ndim != 2 or V.shape[0] == 0:
        raise ValueError("V must be a nonempty 2-D array of points")
    m, n = V.shape
    mu = V.mean(axis=0)
    Vc = V - mu
    scale = max(1.0, float(np.max(np.abs(V))))
    if m == 1:
        rank = 0
        basis = np.zeros((n, 0))
        complement = np.eye(n)
    else:
        _, s, Vt = np.linalg.svd(Vc, full_matrices=True)
        thr = s[0] * _RANK_RTOL + 1e-13 * scale if s.size else 0.0
        rank = int(np.sum(s > thr))
        basis = Vt[:rank].T
        complement = Vt[rank:].T

    if rank == 0:
        eye = np.eye(n)
        P = HPolytope(np.vstack([eye, -eye]), np.concatenate([mu, -mu]))
        return P.with_vertices(mu[None, :])

    if rank == n:
        if n == 1:
            lo, hi = float(V.min()), float(V.max())
            P = HPolytope(np.array([[1.0], [-1.0]]), np.array([hi, -lo]))
            return P.with_vertices(np.array([[lo], [hi]]))
        try:
            hull = ConvexHull(V)
        except QhullError:
            hull = ConvexHull(V, qhull_options="QJ")
        G = hull.equations[:, :-1]
        g = -hull.equations[:, -1]
        P = HPolytope(G, g)
        P = HPolytope(*P._deduplicated())
        return P.with_vertices(V[hull.vertices])

    # lower-dimensional hull: recurse in subspace coordinates
    Z = Vc @ basis
    Pz = vertex_hull(Z)
    G_in = Pz.G @ basis.T
    g_in = Pz.g + G_in @ mu
    Ct = complement.T
    G_eq = np.vstack([Ct, -Ct])
    g_eq = np.concatenate([Ct @ mu, -Ct @ mu])
    P = HPolytope(np.vstack([G_in, G_eq]), np.concatenate([g_in, g_eq]))
    return P.with_vertices(mu[None, :] + Pz.vertices() @ basis.T)


# ----------------------------------------------------------------------
# set algebra
# ----------------------------------------------------------------------
def pontryagin_diff(P: HPolytope, Q: HPolytope) -> HPolytope:
    """Pontryagin (erosion) difference ``P ⊖ Q``.

    Each row offset of ``P`` is reduced by the support of ``Q`` along
    that row.  The result may be empty; emptiness is detected and logged
    but not raised, so callers can decide how to handle it.

    Raises:
        UnboundedSetError: If ``Q`` is unbounded along some row of ``P``.
        EmptySetError: If ``Q`` is empty.
    """
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    shrink = np.array([Q.support(row) for row in P.G])
    out = HPolytope(P.G.copy(), P.g - shrink)
    if out.is_empty():
        logger.warning("Pontryagin difference is empty")
    return out


def minkowski_sum(P: HPolytope, Q: HPolytope) -> HPolytope:
    """Minkowski sum ``P ⊕ Q`` via pairwise vertex sums and a hull."""
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    VP = P.vertices()
    VQ = Q.vertices()
    V = (VP[:, None, :] + VQ[None, :, :]).reshape(-1, P.dim)
    return vertex_hull(V)


def affine_image(P: HPolytope, M) -> HPolytope:
    """Image ``{M x : x in P}`` via mapped vertices.

    Exact for rank-deficient ``M`` as well: the hull conversion emits
    paired rows spanning the orthogonal complement of the image.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise ValueError(
            f"map expects dimension {M.shape[1]}, polytope has {P.dim}"
        )
    return vertex_hull(P.vertices() @ M.T)


def convex_hull_union(polys) -> HPolytope:
    """Convex hull of a union of polytopes, via pooled vertices."""
    polys = list(polys)
    if not polys:
        raise ValueError("need at least one polytope")
    dim = polys[0].dim
    if any(P.dim != dim for P in polys):
        raise ValueError("all polytopes must share the same dimension")
    V = np.vstack([P.vertices() for P in polys])
    return vertex_hull(V)


def set_equal(P: HPolytope, Q: HPolytope, tol: float = DEFAULT_TOL) -> bool:
    """Two-sided inclusion test at the given tolerance."""
    return P.contains_set(Q, tol) and Q.contains_set(P, tol)


# ----------------------------------------------------------------------
# projection (variable elimination)
# ----------------------------------------------------------------------
def project(
    P: HPolytope,
    coords,
    row_cap: int = FM_ROW_CAP,
    initial_outer: HPolytope | None = None,
) -> HPolytope:
    """Exact orthogonal projection onto a subset of coordinates.

    Implicit equality rows are first removed by Gaussian substitution.
    When many coordinates must be eliminated and the source set is
    full-dimensional, the projection is computed by outer refinement
    (certificate cuts on the shadow), which is output-sensitive; small
    eliminations and degenerate sources use variable elimination
    (Fourier-Motzkin) with row pruning after every step.

    Args:
        P: Polytope to project.
        coords: Coordinate indices to keep; the output columns follow
            this order.
        row_cap: Hard cap on intermediate row counts of the elimination
            path.
        initial_outer: Optional bounded polytope in the kept coordinates
            that is known to contain the shadow.  Refinement then starts
            from its rows instead of a bounding box, which makes repeated
            projections of slowly shrinking sets (set recursions) cheap.
            The caller is responsible for the containment; a wrong seed
            yields a wrong (too small) result.

    Returns:
        The projected polytope in the kept coordinates.

    Raises:
        ProjectionLimitError: If an elimination step would exceed
            ``row_cap`` rows, or the refinement budget is exhausted.
        ValueError: If ``coords`` contains duplicates or out-of-range
            indices.
    """
    coords = list(coords)
    n = P.dim
    if len(set(coords)) != len(coords):
        raise ValueError("coords must not contain duplicates")
    if any(c < 0 or c >= n for c in coords):
        raise ValueError(f"coords must lie in [0, {n})")
    if initial_outer is not None and initial_outer.dim != len(coords):
        raise ValueError(
            f"initial_outer must live in the {len(coords)} kept coordinates"
        )
    eliminate = [j for j in range(n) if j not in coords]
    G, g = P._deduplicated()
    G, g, eliminate = _gaussian_equality_elimination(G, g, eliminate)
    if eliminate and (
        initial_outer is not None or _prefer_refinement(G, eliminate)
    ):
        reduced = HPolytope(G, g)
        _, radius = reduced.chebyshev_center()
        if radius > 1e-9:
            # full-dimensional source: shadow is full-dimensional too
            try:
                return _project_by_refinement(
                    reduced, coords, initial_outer=initial_outer
                )
            except ProjectionLimitError:
                logger.warning(
                    "projection refinement budget exhausted; falling back "
                    "to variable elimination"
                )
    while eliminate:
        j = _pick_elimination_column(G, eliminate)
        G, g = _fm_step(G, g, j, row_cap)
        eliminate.remove(j)
        G, g = _prune_rows(G, g)
    out = HPolytope(G[:, coords], g)
    return out.remove_redundancy()


def _prefer_refinement(G: np.ndarray, eliminate: list[int]) -> bool:
    """Heuristic choice between refinement cuts and variable elimination.

    Refinement wins when several coordinates must go or when even the
    cheapest single elimination would already create a large pair
    product.
    """
    if len(eliminate) >= 3:
        return True
    cheapest = None
    for j in eliminate:
        col = G[:, j]
        pairs = int(np.sum(col > 1e-12)) * int(np.sum(col < -1e-12))
        cheapest = pairs if cheapest is None else min(cheapest, pairs)
    return cheapest is not None and cheapest > 20_000


def _project_by_refinement(
    P: HPolytope,
    coords: list[int],
    tol: float = 1e-9,
    max_cuts: int = 20000,
    max_sweeps: int = 1000,
    initial_outer: HPolytope | None = None,
) -> HPolytope:
    """Exact shadow of ``P`` on ``coords`` via outer-approximation cuts.

    Starts from the bounding box of the shadow (or a caller-supplied
    outer approximation) and repeatedly tests the vertices of the outer
    approximation for membership in the shadow.  Vertices outside yield
    a valid inequality of the shadow that cuts them off; the inequality
    is tightened by a support LP so it touches the shadow, then added as
    a cut.  The loop ends when every vertex of the outer approximation
    lies in the shadow, at which point outer and inner hulls coincide
    and the result is exact at LP tolerance.

    Membership tests and separating rows come from a feasibility LP over
    the eliminated coordinates (with its infeasibility certificate), or
    from closed-form interval arithmetic when only one coordinate is
    eliminated.

    Raises:
        EmptySetError: If ``P`` is empty.
        UnboundedSetError: If the shadow is unbounded.
        ProjectionLimitError: If the cut or sweep budget is exhausted.
    """
    n = P.dim
    drop = [j for j in range(n) if j not in coords]
    A_x = P.G[:, coords]
    b = P.g
    k = len(coords)

    if initial_outer is not None:
        # trusted bounded superset of the shadow; rows used verbatim
        G_out = [initial_outer.G.copy()]
        g_out = [initial_outer.g.copy()]
    else:
        # bounding box of the shadow (certifies boundedness and emptiness)
        lo = np.zeros(k)
        hi = np.zeros(k)
        for i in range(k):
            c = np.zeros(n)
            c[coords[i]] = 1.0
            res = _lp(c, P.G, P.g)
            if res.status == 2:
                raise EmptySetError("cannot project an empty set")
            if res.status != 0:
                raise UnboundedSetError(
                    "shadow is unbounded; no H-description"
                )
            lo[i] = res.fun
            res = _lp(-c, P.G, P.g)
            if res.status != 0:
                raise UnboundedSetError(
                    "shadow is unbounded; no H-description"
                )
            hi[i] = -res.fun
        box = HPolytope.box(lo, hi)
        G_out = [box.G]
        g_out = [box.g]

    if len(drop) == 1:
        separate = _OneVarSeparator(A_x, P.G[:, drop[0]], b, tol)
    else:
        separate = _PhaseOneSeparator(A_x, P.G[:, drop], b, tol)

    def tightened(d):
        """Support offset of the shadow in direction ``d`` (unit norm)."""
        c_theta = np.zeros(n)
        c_theta[coords] = -d
        sup = _lp(c_theta, P.G, P.g)
        if sup.status != 0:
            raise PolytopeError(f"support LP failed with status {sup.status}")
        return -sup.fun

    n_cuts = 0
    certified: set[tuple] = set()
    for _ in range(max_sweeps):
        outer = HPolytope(np.vstack(G_out), np.concatenate(g_out))
        new_rows = {}
        for w in outer.vertices():
            key = tuple(np.round(w, 10))
            if key in certified:
                continue
            d = separate(w)
            if d is None:
                certified.add(key)
                continue
            d = d / np.linalg.norm(d)
            row_key = tuple(np.round(d, 10))
            if row_key in new_rows:
                continue
            offset = tightened(d)
            if d @ w <= offset + tol * max(1.0, abs(offset)):
                # certificate separated by less than the tolerance after
                # tightening: the vertex is tolerance-inside the shadow
                certified.add(key)
                continue
            new_rows[row_key] = (d, offset)
            n_cuts += 1
            if n_cuts > max_cuts:
                raise ProjectionLimitError(
                    f"projection refinement exceeded {max_cuts} cuts"
                )
        if not new_rows:
            if n_cuts == 0 and initial_outer is not None:
                return initial_outer  # seed already equals the shadow
            return outer.remove_redundancy()
        G_out.append(np.array([d for d, _ in new_rows.values()]))
        g_out.append(np.array([off for _, off in new_rows.values()]))
    raise ProjectionLimitError(
        f"projection refinement did not settle in {max_sweeps} sweeps"
    )


class _PhaseOneSeparator:
    """Separating directions for a shadow, via feasibility-LP certificates.

    Callable: returns ``None`` when the point lies in the shadow, else a
    direction ``d`` (not normalized) with ``d @ x <= h`` valid for the
    shadow and violated by the point.
    """

    def __init__(self, A_x, A_v, b, tol):
        m = A_x.shape[0]
        self.A_x, self.A_v, self.b, self.tol = A_x, A_v, b, tol
        self.cols = np.hstack([A_v, -np.ones((m, 1))])
        self.obj = np.zeros(A_v.shape[1] + 1)
        self.obj[-1] = 1.0
        self.bounds = [(None, None)] * A_v.shape[1] + [(0.0, None)]

    def __call__(self, w):
        rhs = self.b - self.A_x @ w
        res = linprog(
            self.obj,
            A_ub=self.cols,
            b_ub=rhs,
            bounds=self.bounds,
            method="highs",
        )
        if res.status != 0:
            raise PolytopeError(
                f"membership LP failed with status {res.status}"
            )
        if res.fun <= self.tol * max(1.0, float(np.abs(rhs).max())):
            return None
        y = -res.ineqlin.marginals
        d = y @ self.A_x
        if np.linalg.norm(d) <= 1e-12:
            raise PolytopeError(
                "degenerate separation certificate in projection"
            )
        return d


class _OneVarSeparator:
    """Separating directions when a single coordinate is eliminated.

    Membership reduces to an interval test on the eliminated coordinate;
    a violated zero-coefficient row separates directly, and an empty
    interval yields the (valid) pair combination of the binding upper
    and lower rows.
    """

    def __init__(self, A_x, a, b, tol):
        self.tol = tol
        pos = a > 1e-12
        neg = a < -1e-12
        zero = ~(pos | neg)
        self.R0 = A_x[zero]
        self.r0 = b[zero]
        self.Up = A_x[pos] / a[pos, None]
        self.up = b[pos] / a[pos]
        self.Lo = A_x[neg] / (-a[neg, None])
        self.lo = b[neg] / (-a[neg])
        self._lp_fallback = _PhaseOneSeparator(A_x, a[:, None], b, tol)

    def __call__(self, w):
        if self.R0.shape[0]:
            slack = self.R0 @ w - self.r0
            i = int(np.argmax(slack))
            if slack[i] > self.tol * max(1.0, abs(self.r0[i])):
                return self.R0[i].copy()
        if not (self.Up.shape[0] and self.Lo.shape[0]):
            return None  # eliminated coordinate unbounded on one side
        ub = self.up - self.Up @ w
        lb = self.Lo @ w - self.lo
        if np.max(lb) - np.min(ub) <= self.tol:
            return None
        # choose the upper/lower pair with the largest violation after
        # row normalization; near-antiparallel pairs give near-zero rows
        # whose violation would not survive normalization
        top_i = np.argsort(ub)[:4]
        top_j = np.argsort(-lb)[:4]
        best, best_violation = None, 0.0
        for i in top_i:
            for j in top_j:
                gap = lb[j] - ub[i]
                if gap <= 0.0:
                    continue
                row = self.Up[i] + self.Lo[j]
                violation = gap / max(np.linalg.norm(row), 1e-300)
                if violation > best_violation:
                    best, best_violation = row, violation
        if best is None or best_violation <= self.tol:
            # no well-conditioned pair separates; decide by certificate
            return self._lp_fallback(w)
        return best


def _pick_elimination_column(G: np.ndarray, eliminate: list[int]) -> int:
    """Greedy choice minimizing the number of generated row pairs."""
    best, best_cost = eliminate[0], None
    for j in eliminate:
        col = G[:, j]
        pos = int(np.sum(col > 1e-12))
        neg = int(np.sum(col < -1e-12))
        cost = pos * neg - (pos + neg)
        if best_cost is None or cost < best_cost:
            best, best_cost = j, cost
    return best


def _fm_step(G: np.ndarray, g: np.ndarray, j: int, row_cap: int):
    """Eliminate column ``j`` by pairing positive and negative rows."""
    col = G[:, j]
    pos = col > 1e-12
    neg = col < -1e-12
    zero = ~(pos | neg)
    n_new = int(pos.sum()) * int(neg.sum())
    if n_new + int(zero.sum()) > row_cap:
        raise ProjectionLimitError(
            f"elimination of column {j} would create "
            f"{n_new + int(zero.sum())} rows (cap {row_cap})"
        )
    parts_G = [G[zero]]
    parts_g = [g[zero]]
    if n_new:
        Gp = G[pos] / col[pos, None]
        gp = g[pos] / col[pos]
        Gm = G[neg] / (-col[neg, None])
        gm = g[neg] / (-col[neg])
        comb_G = (Gp[:, None, :] + Gm[None, :, :]).reshape(n_new, G.shape[1])
        comb_g = (gp[:, None] + gm[None, :]).reshape(n_new)
        parts_G.append(comb_G)
        parts_g.append(comb_g)
    Gn = np.vstack(parts_G) if parts_G else np.zeros((0, G.shape[1]))
    gn = np.concatenate(parts_g) if parts_g else np.zeros(0)
    if Gn.shape[0]:
        Gn[:, j] = 0.0
    return Gn, gn


def _prune_rows(G: np.ndarray, g: np.ndarray):
    """Normalize, dedup and LP-prune a row system after an elimination."""
    norms = np.linalg.norm(G, axis=1)
    trivial = norms <= 1e-12
    if np.any(trivial) and np.any(g[trivial] < -1e-9):
        # infeasible zero row: canonical empty marker
        return np.zeros((1, G.shape[1])), np.array([-1.0])
    G, g = G[~trivial], g[~trivial]
    if G.shape[0] == 0:
        raise PolytopeError("projection produced an unconstrained system")
    G, g = HPolytope(G, g)._deduplicated()
    if G.shape[0] > 1:
        thinned = _bulk_irredundant(G, g, 1e-9)
        if thinned is None:
            return np.zeros((1, G.shape[1])), np.array([-1.0])
        G, g = thinned
    return G, g


def _system_box(G: np.ndarray, g: np.ndarray):
    """Coordinate-wise bounds of ``{x : Gx <= g}``; infinite where unbounded.

    Returns ``None`` when the system is infeasible.
    """
    n = G.shape[1]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    for j in range(n):
        c = np.zeros(n)
        c[j] = 1.0
        res = _lp(c, G, g)
        if res.status == 2:
            return None
        if res.status == 0:
            lo[j] = res.fun
        res = _lp(-c, G, g)
        if res.status == 2:
            return None
        if res.status == 0:
            hi[j] = -res.fun
    return lo, hi


def _box_slack_mask(G: np.ndarray, g: np.ndarray, lo, hi, margin: float):
    """Rows strictly slack over the bounding box of the full system.

    Any row that is necessary (removing it enlarges the set) is tight at
    some point of the set, hence attains at least its offset over any
    superset of the set, including the box.  Rows strictly below their
    offset over the box are therefore safe to drop.
    """
    big = 1e30
    lo_c = np.where(np.isfinite(lo), lo, -big)
    hi_c = np.where(np.isfinite(hi), hi, big)
    pos = np.clip(G, 0.0, None)
    neg = np.clip(G, None, 0.0)
    upper = pos @ hi_c + neg @ lo_c
    return upper <= g - margin * np.maximum(1.0, np.abs(g))


def _clarkson_keep(G: np.ndarray, g: np.ndarray, tol: float):
    """Output-sensitive redundancy mask via constraint generation.

    Each candidate row is tested against the current working subset of
    certified rows only.  A drop is sound because the working subset is
    contained in the final output; rows whose subset optimum violates no
    other constraint are certified irredundant.  Returns ``None`` when the
    system turns out to be infeasible.
    """
    m, n = G.shape
    active = np.zeros(m, dtype=bool)
    # Seed with coordinate-extreme rows so early subset LPs are usually
    # bounded; unbounded ones are handled conservatively below.
    for j in range(n):
        col = G[:, j]
        active[int(np.argmax(col))] = True
        active[int(np.argmin(col))] = True
    scale = np.maximum(1.0, np.abs(g))
    for i in range(m):
        if active[i]:
            continue
        while True:
            idx = np.flatnonzero(active)
            res = _lp(-G[i], G[idx], g[idx])
            if res.status == 2:
                return None
            if res.status != 0:
                # unbounded or numerically inconclusive: keep the row
                active[i] = True
                break
            if -res.fun <= g[i] + tol * scale[i]:
                break
            violation = G @ res.x - g
            violation[active] = -np.inf
            violation[i] = -np.inf
            j = int(np.argmax(violation))
            if violation[j] > tol * scale[j]:
                active[j] = True
            else:
                active[i] = True
                break
    return active


def _bulk_irredundant(G: np.ndarray, g: np.ndarray, tol: float):
    """Thin a large row system to (a superset of) its irredundant core.

    Applies the bounding-box slack filter, then constraint generation.
    Returns ``None`` when the system is infeasible.
    """
    if G.shape[0] > 4 * G.shape[1]:
        box = _system_box(G, g)
        if box is None:
            return None
        slack = _box_slack_mask(G, g, box[0], box[1], 1e-7)
        if np.any(slack) and not np.all(slack):
            G, g = G[~slack], g[~slack]
    keep = _clarkson_keep(G, g, tol)
    if keep is None:
        return None
    return G[keep], g[keep]


def _gaussian_equality_elimination(
    G: np.ndarray, g: np.ndarray, eliminate: list[int]
):
    """Remove eliminated coordinates pinned by paired-inequality equalities.

    Detects antiparallel unit-norm row pairs with matching offsets (an
    equality written as two inequalities) and substitutes the pinned
    coordinate into all rows, which keeps later eliminations exact and
    cheap.
    """
    eliminate = list(eliminate)
    changed = True
    while changed and eliminate:
        changed = False
        index = {}
        for i, (row, off) in enumerate(zip(G, g)):
            index[tuple(np.round(row, 9))] = (i, off)
        for i, (row, off) in enumerate(zip(G, g)):
            key = tuple(np.round(-row, 9))
            hit = index.get(key)
            if hit is None or hit[0] == i:
                continue
            k, off_k = hit
            if abs(off + off_k) > 1e-9:
                continue
            # rows i and k encode the equality row @ x == off
            cols = [j for j in eliminate if abs(row[j]) > 1e-9]
            if not cols:
                continue
            j = max(cols, key=lambda c: abs(row[c]))
            coef = row[j]
            mask = np.ones(len(g), dtype=bool)
            mask[[i, k]] = False
            G_rest, g_rest = G[mask], g[mask]
            factor = G_rest[:, j] / coef
            G_new = G_rest - factor[:, None] * row[None, :]
            g_new = g_rest - factor * off
            G_new[:, j] = 0.0
            P = HPolytope(G_new, g_new) if len(g_new) else None
            if P is None:
                raise PolytopeError(
                    "equality elimination removed every row"
                )
            G, g = P._deduplicated()
            eliminate.remove(j)
            changed = True
            break
    return G, g, eliminate

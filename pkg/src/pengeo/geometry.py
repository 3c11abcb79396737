"""Chart-level geometry: metric fields, horizontal frames, projections, and
the penalized metric family.

Everything lives in a single global coordinate chart on R^n.  Points and
tangent vectors are plain 1-d numpy arrays of length n; no wrapper classes
are used for them.  A :class:`SubRiemannianStructure` bundles a Riemannian
metric (as a Gram-matrix field) with a frame of vector fields spanning the
constraint distribution.  The penalized metric keeps the base metric on the
distribution and scales its g-orthogonal complement by a factor q >= 1, so
q = 1 recovers the base metric and large q makes non-horizontal motion
expensive.

All operations here are pure functions of immutable inputs and are safe to
call concurrently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger("pengeo")

__all__ = [
    "DegenerateFrameError",
    "MetricField",
    "FrameField",
    "SubRiemannianStructure",
    "as_point",
    "check_penalty",
    "project_horizontal",
    "penalized_metric_eval",
    "penalized_forms",
    "penalized_gram",
    "field_jacobian",
    "lie_bracket",
    "validate_bracket_generating",
    "validate_structure",
]

# Condition number of the frame Gram matrix beyond which the projection is
# considered numerically meaningless.
FRAME_CONDITION_LIMIT = 1e8

# Singular values above this fraction of the largest one count toward the
# numerical rank in the bracket-generation certificate.
RANK_TOLERANCE = 1e-6

# Relative step scale for the central differences used on frame fields.
BRACKET_FD_SCALE = 1e-5


class DegenerateFrameError(RuntimeError):
    """Frame Gram matrix numerically singular or ill conditioned at a point."""


def as_point(p, dimension: Optional[int] = None) -> np.ndarray:
    """Coerce to a finite 1-d float array, optionally checking its length.

    Used for both points and tangent vectors, which share the same
    coordinate representation.
    """
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d coordinate array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coordinates must be finite")
    if dimension is not None and arr.size != dimension:
        raise ValueError(f"expected {dimension} coordinates, got {arr.size}")
    return arr


def check_penalty(q) -> float:
    """Validate the penalty parameter: any finite real q >= 1."""
    qf = float(q)
    if not np.isfinite(qf) or qf < 1.0:
        raise ValueError(f"penalty parameter must be a finite real >= 1, got {q!r}")
    return qf


@dataclass(frozen=True)
class MetricField:
    """Riemannian metric given by its Gram-matrix field in chart coordinates.

    Parameters
    ----------
    gram : callable
        Maps a point of shape (n,) to the symmetric positive definite Gram
        matrix of shape (n, n) at that point.  If ``vectorized`` is true the
        callable instead receives a stack of points of shape (m, n) and must
        return either an (m, n, n) stack or a single (n, n) matrix valid for
        all of them (constant metrics).
    vectorized : bool
        Whether ``gram`` accepts stacked points.  This only speeds up the
        quadrature loops; semantics are unchanged.
    """

    gram: Callable[[np.ndarray], np.ndarray]
    vectorized: bool = False

    def __call__(self, p) -> np.ndarray:
        pt = as_point(p)
        return self.gram_batch(pt[None, :])[0]

    def gram_batch(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the Gram matrix at every row of ``points`` (shape (m, n))."""
        m, n = points.shape
        if self.vectorized:
            raw = np.asarray(self.gram(points), dtype=float)
        else:
            raw = np.asarray([self.gram(pt) for pt in points], dtype=float)
        if raw.ndim == 2:
            raw = np.broadcast_to(raw, (m, n, n))
        if raw.shape != (m, n, n):
            raise ValueError(
                f"metric field returned shape {raw.shape}, expected {(m, n, n)}"
            )
        gap = float(np.max(np.abs(raw - raw.transpose(0, 2, 1)))) if m else 0.0
        if gap > 1e-10 * (1.0 + float(np.max(np.abs(raw)))):
            raise ValueError(f"metric Gram matrix is not symmetric (gap {gap:.3e})")
        return raw


@dataclass(frozen=True)
class FrameField:
    """Frame of vector fields spanning the constraint distribution.

    ``columns`` maps a point (n,) to an (n, k) matrix whose columns are the
    frame vectors at that point; with ``vectorized`` set it receives (m, n)
    stacks and returns (m, n, k) (or a constant (n, k) matrix).
    """

    columns: Callable[[np.ndarray], np.ndarray]
    vectorized: bool = False

    def __call__(self, p) -> np.ndarray:
        pt = as_point(p)
        return self.frame_batch(pt[None, :])[0]

    def frame_batch(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the frame matrix at every row of ``points`` (shape (m, n))."""
        m, n = points.shape
        if self.vectorized:
            raw = np.asarray(self.columns(points), dtype=float)
        else:
            raw = np.asarray([self.columns(pt) for pt in points], dtype=float)
        if raw.ndim == 2:
            raw = np.broadcast_to(raw, (m,) + raw.shape)
        if raw.ndim != 3 or raw.shape[0] != m or raw.shape[1] != n:
            raise ValueError(
                f"frame field returned shape {raw.shape}, expected (m, {n}, k)"
            )
        if not np.all(np.isfinite(raw)):
            raise ValueError("frame field returned non-finite entries")
        return raw


@dataclass(frozen=True)
class SubRiemannianStructure:
    """The geometric problem datum: chart dimension, metric, horizontal frame.

    The distribution is the column span of ``frame``; orthogonal projections
    onto it (and its g-orthogonal complement) are computed on demand by
    :func:`project_horizontal`.  Instances are immutable and safe to share.
    """

    dimension: int
    rank: int
    metric: MetricField
    frame: FrameField
    name: str

    def __post_init__(self):
        if not 1 <= self.rank <= self.dimension:
            raise ValueError(
                f"need 1 <= rank <= dimension, got rank {self.rank} in dimension {self.dimension}"
            )


def _factor_frame(structure: SubRiemannianStructure, points: np.ndarray):
    """Metric, frame, and the factored frame Gram matrix at a batch of points.

    Returns (G, F, FtG, L) with G the metric Gram stack, F the frame stack,
    FtG = F^T G, and L the Cholesky factor of F^T G F.  Raises
    :class:`DegenerateFrameError` when F^T G F is ill conditioned or not
    positive definite at any of the points.
    """
    G = structure.metric.gram_batch(points)
    F = structure.frame.frame_batch(points)
    m = points.shape[0]
    expected = (m, structure.dimension, structure.rank)
    if F.shape != expected:
        raise ValueError(f"frame stack has shape {F.shape}, expected {expected}")
    FtG = np.matmul(F.transpose(0, 2, 1), G)
    M = np.matmul(FtG, F)
    M = 0.5 * (M + M.transpose(0, 2, 1))
    cond = np.linalg.cond(M)
    bad = ~np.isfinite(cond) | (cond > FRAME_CONDITION_LIMIT)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DegenerateFrameError(
            f"frame is numerically degenerate at point {points[i].tolist()}"
            f" (frame Gram condition number {cond[i]:.3e} exceeds {FRAME_CONDITION_LIMIT:.1e})"
        )
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFrameError(
            f"frame Gram matrix is not positive definite: {exc}"
        ) from exc
    return G, F, FtG, L


def _project_batch(F, FtG, L, vectors):
    """Horizontal/complement split of a batch of vectors given frame factors."""
    rhs = np.matmul(FtG, vectors[:, :, None])
    z = np.linalg.solve(L, rhs)
    c = np.linalg.solve(L.transpose(0, 2, 1), z)
    pv = np.matmul(F, c)[:, :, 0]
    return pv, vectors - pv


def penalized_forms(structure: SubRiemannianStructure, q, points, vectors):
    """Penalized quadratic-form data for a batch of tangent vectors.

    For each row i, with P the g-orthogonal projection onto the distribution
    at ``points[i]`` and Pc its complement, returns three arrays:

    - ``horizontal[i] = g(P v_i, P v_i)``
    - ``vertical[i]   = g(Pc v_i, Pc v_i)``
    - ``flux[i]       = G (P v_i + q Pc v_i)``

    so that the penalized form value is ``horizontal + q * vertical`` and
    ``flux`` is the penalized form's matrix applied to v_i (the derivative of
    the form in its vector argument is ``2 flux``).
    """
    qf = check_penalty(q)
    points = np.asarray(points, dtype=float)
    vectors = np.asarray(vectors, dtype=float)
    G, F, FtG, L = _factor_frame(structure, points)
    pv, pperp = _project_batch(F, FtG, L, vectors)
    Gpv = np.matmul(G, pv[:, :, None])[:, :, 0]
    Gpp = np.matmul(G, pperp[:, :, None])[:, :, 0]
    horizontal = np.einsum("mi,mi->m", pv, Gpv)
    vertical = np.einsum("mi,mi->m", pperp, Gpp)
    flux = Gpv + qf * Gpp
    return horizontal, vertical, flux


def penalized_gram(structure: SubRiemannianStructure, q, points) -> np.ndarray:
    """Matrix stack of the penalized metric at a batch of points.

    With P the g-orthogonal projection onto the distribution, the penalized
    form's matrix is  q G + (1 - q) G P, which is symmetric because G P is
    (P is g-self-adjoint).  The result is symmetrized to scrub roundoff and
    is positive definite for every valid q.
    """
    qf = check_penalty(q)
    pts = np.asarray(points, dtype=float)
    G, F, FtG, L = _factor_frame(structure, pts)
    z = np.linalg.solve(L, FtG)
    P = np.matmul(F, np.linalg.solve(L.transpose(0, 2, 1), z))
    Gq = qf * G + (1.0 - qf) * np.matmul(G, P)
    return 0.5 * (Gq + Gq.transpose(0, 2, 1))


def project_horizontal(structure: SubRiemannianStructure, p, v):
    """Split a tangent vector into its distribution and complement parts.

    Solves (F^T G F) c = F^T G v by a symmetric positive definite
    factorization and returns (F c, v - F c), the g-orthogonal projections
    of v onto the distribution and onto its complement at p.

    Parameters
    ----------
    structure : SubRiemannianStructure
    p : array_like, shape (n,)
        Base point.
    v : array_like, shape (n,)
        Tangent vector at p.

    Returns
    -------
    (pv, pperp_v) : pair of ndarrays, shape (n,)
        Horizontal part and complement part; their sum reproduces v.

    Raises
    ------
    DegenerateFrameError
        If the frame Gram matrix at p is numerically singular.
    """
    pt = as_point(p, structure.dimension)
    vec = as_point(v, structure.dimension)
    G, F, FtG, L = _factor_frame(structure, pt[None, :])
    pv, pperp = _project_batch(F, FtG, L, vec[None, :])
    return pv[0], pperp[0]


def penalized_metric_eval(structure: SubRiemannianStructure, q, p, v, w) -> float:
    """Evaluate the penalized metric g_q(v, w) = g(Pv, Pw) + q g(Pc v, Pc w).

    Symmetric in (v, w); equals g(v, w) at q = 1; affine and nondecreasing
    in q when v = w.
    """
    qf = check_penalty(q)
    pt = as_point(p, structure.dimension)
    vv = as_point(v, structure.dimension)
    ww = as_point(w, structure.dimension)
    G, F, FtG, L = _factor_frame(structure, pt[None, :])
    pv, pp = _project_batch(
        np.repeat(F, 2, axis=0),
        np.repeat(FtG, 2, axis=0),
        np.repeat(L, 2, axis=0),
        np.stack([vv, ww]),
    )
    g0 = G[0]
    value = pv[0] @ g0 @ pv[1] + qf * (pp[0] @ g0 @ pp[1])
    return float(value)


def field_jacobian(field: Callable[[np.ndarray], np.ndarray], p, step: Optional[float] = None) -> np.ndarray:
    """Jacobian of a vector field by central finite differences.

    The step is ``BRACKET_FD_SCALE * (1 + |p|_inf)`` unless given explicitly.
    """
    pt = as_point(p)
    h = step if step is not None else BRACKET_FD_SCALE * (1.0 + float(np.max(np.abs(pt))))
    cols = []
    for a in range(pt.size):
        e = np.zeros(pt.size)
        e[a] = h
        fp = np.asarray(field(pt + e), dtype=float)
        fm = np.asarray(field(pt - e), dtype=float)
        cols.append((fp - fm) / (2.0 * h))
    return np.column_stack(cols)


def lie_bracket(field_v, field_w, p) -> np.ndarray:
    """Lie bracket [V, W](p) = DW(p) V(p) - DV(p) W(p), Jacobians by central differences."""
    pt = as_point(p)
    jv = field_jacobian(field_v, pt)
    jw = field_jacobian(field_w, pt)
    return jw @ np.asarray(field_v(pt), dtype=float) - jv @ np.asarray(field_w(pt), dtype=float)


def _bracket_field(field_v, field_w):
    def bracket(p):
        return lie_bracket(field_v, field_w, p)

    return bracket


def validate_bracket_generating(structure: SubRiemannianStructure, p, max_depth: int):
    """Certificate that iterated frame brackets span the whole chart at p.

    Starting from the frame fields (depth 1), brackets of accumulated fields
    whose depths sum to d are adjoined at each depth d, and the numerical
    rank of all field values at p is taken after every round (singular
    values above ``RANK_TOLERANCE`` times the largest count).

    Returns
    -------
    (generated_rank, depth_reached) : pair of ints
        The final rank and the first depth at which full rank was reached;
        ``depth_reached`` equals ``max_depth`` when full rank was not
        achieved, which is a valid report, not an error.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    pt = as_point(p, structure.dimension)
    n, k = structure.dimension, structure.rank

    def frame_column(j):
        def column(x):
            x = np.asarray(x, dtype=float)
            return structure.frame.frame_batch(x[None, :])[0][:, j]

        return column

    fields = [(1, frame_column(j)) for j in range(k)]

    def span_rank() -> int:
        values = np.column_stack([f(pt) for _, f in fields])
        sv = np.linalg.svd(values, compute_uv=False)
        if sv.size == 0 or sv[0] <= 0.0:
            return 0
        return int(np.sum(sv > RANK_TOLERANCE * sv[0]))

    rank = span_rank()
    if rank >= n:
        return rank, 1
    for depth in range(2, max_depth + 1):
        new_fields = []
        for ia in range(len(fields)):
            for ib in range(ia + 1, len(fields)):
                da, fa = fields[ia]
                db, fb = fields[ib]
                if da + db != depth:
                    continue
                new_fields.append((depth, _bracket_field(fa, fb)))
        fields.extend(new_fields)
        rank = span_rank()
        if rank >= n:
            return rank, depth
    logger.warning(
        "distribution of %s not verified bracket-generating at %s (rank %d of %d at depth %d)",
        structure.name,
        pt.tolist(),
        rank,
        n,
        max_depth,
    )
    return rank, max_depth


def validate_structure(structure: SubRiemannianStructure, points) -> None:
    """Spot-check metric definiteness and frame regularity at sample points.

    Raises ValueError or DegenerateFrameError on a violation; returns None
    when all checks pass.  Intended for problem setup and tests, not for
    inner loops.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != structure.dimension:
        raise ValueError(
            f"sample points have dimension {pts.shape[1]}, structure has {structure.dimension}"
        )
    G, _, _, _ = _factor_frame(structure, pts)
    smallest = np.linalg.eigvalsh(G)[:, 0]
    if np.any(smallest <= 0.0):
        i = int(np.argmin(smallest))
        raise ValueError(
            f"metric is not positive definite at point {pts[i].tolist()}"
            f" (smallest eigenvalue {smallest[i]:.3e})"
        )

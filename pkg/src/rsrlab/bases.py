"""Design matrices, projections and restricted spatial bases.

Every basis built here is orthonormal and orthogonal to the column space
of a (possibly row-weighted) design, which is what makes a spatial model
"restricted". The count-data variants weight the rows of the design by
IWLS quantities before projecting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientBasis, InvalidParameter, NumericalFailure, RankDeficientDesign
from .graph import AdjacencyGraph, fix_signs, sorted_eigh

EIG_ONE_TOL = 1e-8
ATTRACTIVE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Fixed-effect design.

    Attributes
    ----------
    X : ndarray, shape (n, p)
    with_intercept : bool
        True when column 0 is the all-ones intercept column.
    names : tuple of str
        Column labels, ``("intercept", ...)`` when `with_intercept`.
    """

    X: np.ndarray
    with_intercept: bool = False
    names: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        n, p = X.shape
        if not np.all(np.isfinite(X)):
            raise InvalidParameter("design contains non-finite entries")
        if self.with_intercept and (p == 0 or not np.all(X[:, 0] == 1.0)):
            raise InvalidParameter("with_intercept set but column 0 is not all ones")
        if not self.names:
            if self.with_intercept:
                names = ("intercept",) + tuple(f"x{k}" for k in range(1, p))
            else:
                names = tuple(f"x{k + 1}" for k in range(p))
            object.__setattr__(self, "names", names)
        if len(self.names) != p:
            raise InvalidParameter(f"{len(self.names)} column names for {p} columns")
        if p >= n:
            raise RankDeficientDesign(f"design has p={p} columns but only n={n} rows")
        if p and np.linalg.matrix_rank(X) < p:
            raise RankDeficientDesign(f"design of shape {X.shape} is not of full column rank")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def with_ones(cls, covariates, names=None) -> "DesignMatrix":
        """Prepend an intercept column to `covariates` (the starred design)."""
        C = np.asarray(covariates, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        cols = ("intercept",) + tuple(names or (f"x{k + 1}" for k in range(C.shape[1])))
        return cls(np.column_stack([np.ones(C.shape[0]), C]), True, cols)

    def drop_intercept(self) -> "DesignMatrix":
        if not self.with_intercept:
            return self
        return DesignMatrix(self.X[:, 1:], False, self.names[1:])


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Orthogonal projections onto C(X) and its complement."""

    P_X: np.ndarray
    P_perp: np.ndarray


def _orth_columns(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis of C(X) from a thin QR factorization."""
    if X.shape[1] == 0:
        return np.zeros((X.shape[0], 0))
    Qx, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * d.max():
        raise RankDeficientDesign("design is numerically rank deficient")
    return Qx


def projections(d: DesignMatrix) -> ProjectionPair:
    Qx = _orth_columns(d.X)
    P = Qx @ Qx.T
    P = 0.5 * (P + P.T)
    return ProjectionPair(P_X=P, P_perp=np.eye(d.n) - P)


def weighted_projection(d: DesignMatrix, h_diag) -> np.ndarray:
    """Complement projection for the row-weighted design ``H^{1/2} X``.

    Returns ``I - H^{1/2} X (X' H X)^{-1} X' H^{1/2}`` for ``H = diag(h_diag)``.
    """
    h = np.asarray(h_diag, dtype=float)
    if h.shape != (d.n,) or not np.all(h > 0) or not np.all(np.isfinite(h)):
        raise InvalidParameter("weights must be a finite positive n-vector")
    Qx = _orth_columns(np.sqrt(h)[:, None] * d.X)
    M = np.eye(d.n) - Qx @ Qx.T
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class SpatialBasis:
    """Orthonormal basis restricted away from a design.

    Attributes
    ----------
    W : ndarray, shape (n, q)
        Orthonormal columns.
    kind : str
        ``"RHZ_L"``, ``"HH_Moran"`` or ``"Custom"``.
    moran_eigenvalues : ndarray, optional
        Eigenvalues paired with the columns of an HH basis.
    design_weights : ndarray, optional
        Row weights g with ``(g * X)' W = 0``. ``None`` means unit weights.
    row_scale : ndarray, optional
        When set, the basis entering the linear predictor is
        ``row_scale[:, None] * W`` rather than `W` itself.
    F : ndarray, optional
        Prior precision attached by the count-data constructors.
    node_scale : ndarray, optional
        Vector s such that ``F = (s * W_eff)' Q (s * W_eff)``.
    """

    W: np.ndarray
    kind: str = "Custom"
    moran_eigenvalues: np.ndarray | None = None
    design_weights: np.ndarray | None = None
    row_scale: np.ndarray | None = None
    F: np.ndarray | None = None
    node_scale: np.ndarray | None = None

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def effective(self) -> np.ndarray:
        if self.row_scale is None:
            return self.W
        return self.row_scale[:, None] * self.W

    def orthogonality_error(self, d: DesignMatrix) -> float:
        Xw = d.X if self.design_weights is None else self.design_weights[:, None] * d.X
        if self.q == 0 or d.p == 0:
            return 0.0
        return float(np.abs(Xw.T @ self.W).max())

    def orthonormality_error(self) -> float:
        if self.q == 0:
            return 0.0
        return float(np.abs(self.W.T @ self.W - np.eye(self.q)).max())


def _complement(Xw: np.ndarray) -> np.ndarray:
    """Eigenvalue-one eigenvectors of the complement projection of C(Xw)."""
    n, p = Xw.shape
    Qx = _orth_columns(Xw)
    M = np.eye(n) - Qx @ Qx.T
    lam, V = sorted_eigh(0.5 * (M + M.T))
    keep = np.abs(lam - 1.0) <= EIG_ONE_TOL
    if keep.sum() != n - p:
        raise NumericalFailure(f"found {keep.sum()} unit eigenvalues, expected {n - p}")
    return V[:, keep]


def complement_basis(d: DesignMatrix) -> SpatialBasis:
    """Orthonormal basis L of C(X)-perp, with ``L L' = I - P_X``."""
    return SpatialBasis(W=_complement(d.X), kind="RHZ_L")


def moran_operator(g: AdjacencyGraph, pp: ProjectionPair) -> np.ndarray:
    """``P_perp A P_perp``, symmetrized against rounding."""
    if pp.P_perp.shape != g.A.shape:
        raise InvalidParameter("projection and adjacency dimensions differ")
    M = pp.P_perp @ g.A @ pp.P_perp
    return 0.5 * (M + M.T)


def _restricted_moran(A: np.ndarray, L: np.ndarray):
    """Eigenpairs of the Moran operator on the subspace spanned by L.

    Since ``P_perp A P_perp = L (L'AL) L'``, diagonalizing the small
    matrix ``L'AL`` gives exactly the operator's eigenvectors inside
    C(X)-perp, including those with eigenvalue zero.
    """
    S = L.T @ A @ L
    lam, U = sorted_eigh(0.5 * (S + S.T))
    return lam, L @ U


def attractive_count(lam: np.ndarray) -> int:
    if lam.size == 0:
        return 0
    scale = np.abs(lam).max()
    return int(np.sum(lam > ATTRACTIVE_TOL * scale)) if scale > 0 else 0


def _reorthonormalize(M: np.ndarray, L: np.ndarray) -> np.ndarray:
    # project back into span(L) and Gram-Schmidt in column order
    M = L @ (L.T @ M)
    Qm, R = np.linalg.qr(M)
    return Qm * np.where(np.diag(R) < 0, -1.0, 1.0)


def _hh_from(A, L, q, attractive_only):
    lam, M = _restricted_moran(A, L)
    avail = attractive_count(lam) if attractive_only else L.shape[1]
    if q is None:
        q = avail
    if q < 0 or q > avail:
        what = "attractive eigenvectors" if attractive_only else "eigenvectors in the complement"
        raise InsufficientBasis(f"requested q={q} but only {avail} {what} are available")
    Mq = _reorthonormalize(M[:, :q], L) if q else M[:, :0]
    return fix_signs(Mq), lam[:q]


def default_hh_q(n: int) -> int:
    return int(np.ceil(0.1 * n))


def hh_basis(g: AdjacencyGraph, d: DesignMatrix, q: int | None = None, attractive_only: bool = False) -> SpatialBasis:
    """Leading Moran-operator eigenvectors restricted to C(X)-perp.

    Parameters
    ----------
    g : AdjacencyGraph
    d : DesignMatrix
    q : int, optional
        Number of columns. Defaults to ``ceil(0.1 n)``; with
        ``attractive_only=True`` and ``q=None`` all attractive vectors.
    attractive_only : bool
        Restrict the pool to eigenvalues above ``1e-8 * max|lambda|``.
    """
    if q is None and not attractive_only:
        q = default_hh_q(d.n)
    L = _complement(d.X)
    M, lam = _hh_from(g.A.astype(float), L, q, attractive_only)
    return SpatialBasis(W=M, kind="HH_Moran", moran_eigenvalues=lam)


def moran_spectrum(g: AdjacencyGraph, d: DesignMatrix) -> np.ndarray:
    """Descending Moran-operator eigenvalues on C(X)-perp (n - p values)."""
    lam, _ = _restricted_moran(g.A.astype(float), _complement(d.X))
    return lam


def count_rhz_basis(d: DesignMatrix, h_diag, graph: AdjacencyGraph | None = None) -> SpatialBasis:
    """Weighted complement basis for count responses.

    The stored `W` is the orthonormal L spanning the unit eigenspace of
    the weighted complement projection; the linear predictor uses
    ``H^{-1/2} L``. With a graph, the penalty ``L' H^{1/2} Q H^{1/2} L``
    is attached.
    """
    h = np.asarray(h_diag, dtype=float)
    weighted_projection(d, h)  # validates weights
    sq = np.sqrt(h)
    L = _complement(sq[:, None] * d.X)
    F = None
    if graph is not None:
        B = sq[:, None] * L
        F = B.T @ graph.laplacian() @ B
        F = 0.5 * (F + F.T)
    return SpatialBasis(W=L, kind="RHZ_L", design_weights=sq, row_scale=1.0 / sq, F=F, node_scale=h)


def count_hh_basis(g: AdjacencyGraph, d: DesignMatrix, r_diag, q: int | None = None, attractive_only: bool = False) -> SpatialBasis:
    """Moran basis for count responses built from ``P_R``-perp.

    `r_diag` holds the diagonal of R, conventionally the reciprocal of
    the final IWLS weights. The penalty ``M' Q M`` is attached.
    """
    r = np.asarray(r_diag, dtype=float)
    weighted_projection(d, r)
    if q is None and not attractive_only:
        q = default_hh_q(d.n)
    sq = np.sqrt(r)
    L = _complement(sq[:, None] * d.X)
    M, lam = _hh_from(g.A.astype(float), L, q, attractive_only)
    F = M.T @ g.laplacian() @ M
    return SpatialBasis(W=M, kind="HH_Moran", moran_eigenvalues=lam, design_weights=sq,
                        F=0.5 * (F + F.T), node_scale=np.ones(d.n))

"""Model specifications ``Y = X beta + W delta + eps``.

A :class:`ModelSpec` fixes the design, the basis W entering the linear
predictor, the penalty F in the prior
``p(delta | tau_s) ~ tau_s^{rank(F)/2} exp(-tau_s/2 delta' F delta)``,
the response family and the hyperparameters. The constructors in
:func:`make_model` produce the four standard members of the family:

=====  ===========  =================  ===========================
kind   design       W                  F
=====  ===========  =================  ===========================
NS     X with 1     none               none
ICAR   X without 1  identity           graph Laplacian Q
RHZ    X with 1     complement L       L' Q L
HH     X with 1     Moran vectors M    M' Q M
=====  ===========  =================  ===========================
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .bases import DesignMatrix, SpatialBasis, complement_basis, count_hh_basis, count_rhz_basis, hh_basis
from .errors import ImplicitInterceptConflict, InvalidParameter, InvalidPenaltyRank
from .graph import AdjacencyGraph, require_connected

KINDS = ("NS", "ICAR", "RHZ", "HH", "Custom")
FAMILIES = ("gaussian", "poisson")
RANK_TOL = 1e-9


@dataclass(frozen=True)
class PriorConfig:
    """Gamma hyperparameters (shape a, scale b) and the beta prior.

    The gamma density is proportional to ``tau^(a-1) exp(-tau/b)``, so the
    prior mean is ``a*b`` and a full conditional has rate ``1/b + quad/2``.
    `beta_sd` of ``None`` means a flat prior on beta; otherwise each
    coefficient gets an independent ``Normal(0, beta_sd^2)`` prior.
    """

    a_eps: float = 0.01
    b_eps: float = 100.0
    a_s: float = 0.01
    b_s: float = 100.0
    beta_sd: float | None = None

    def __post_init__(self):
        for name in ("a_eps", "b_eps", "a_s", "b_s"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameter(f"{name} must be a positive finite number, got {v}")
        if self.beta_sd is not None and not (np.isfinite(self.beta_sd) and self.beta_sd > 0):
            raise InvalidParameter(f"beta_sd must be positive or None, got {self.beta_sd}")

    @property
    def flat_beta(self) -> bool:
        return self.beta_sd is None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        return cls(**{k: d[k] for k in ("a_eps", "b_eps", "a_s", "b_s", "beta_sd") if k in d})

    @classmethod
    def default(cls, family: str = "gaussian") -> "PriorConfig":
        return cls(beta_sd=1000.0) if family == "poisson" else cls()


def matrix_rank_sym(F: np.ndarray) -> int:
    """Rank of a symmetric matrix from its eigenvalues (relative cutoff)."""
    if F.size == 0:
        return 0
    lam = np.linalg.eigvalsh(0.5 * (F + F.T))
    scale = np.abs(lam).max()
    return int(np.sum(np.abs(lam) > RANK_TOL * scale)) if scale > 0 else 0


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One member of the spatial regression family.

    Attributes
    ----------
    design : DesignMatrix
    W : ndarray, shape (n, q)
        Basis as it enters the linear predictor.
    F : ndarray, shape (q, q)
        Prior precision of delta up to the factor ``tau_s``.
    family : {"gaussian", "poisson"}
    priors : PriorConfig
    kind : str
    offset : ndarray, optional
        Log expected counts for Poisson models.
    basis : SpatialBasis, optional
        Restricted basis (RHZ and HH), kept for orthogonality checks.
    laplacian : ndarray, optional
        Graph Laplacian Q when ``F = (s*W)' Q (s*W)``; lets samplers
        evaluate the penalty on the linear-predictor scale.
    node_scale : ndarray, optional
        The vector s above.
    notes : tuple of str
    """

    design: DesignMatrix
    W: np.ndarray
    F: np.ndarray
    family: str
    priors: PriorConfig
    kind: str
    offset: np.ndarray | None = None
    basis: SpatialBasis | None = None
    laplacian: np.ndarray | None = None
    node_scale: np.ndarray | None = None
    notes: tuple = field(default=())

    @property
    def X(self) -> np.ndarray:
        return self.design.X

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def p(self) -> int:
        return self.design.p

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def rank_F(self) -> int:
        return matrix_rank_sym(self.F)

    @property
    def is_restricted(self) -> bool:
        return self.kind in ("RHZ", "HH") or (self.kind == "Custom" and self.basis is not None)


@dataclass
class ConditionReport:
    """Outcome of the five regularity conditions.

    Each entry of `results` maps a condition label to ``(status, detail)``
    with status one of ``"pass"``, ``"fail"`` or ``"n/a"``.
    """

    results: dict

    @property
    def ok(self) -> bool:
        return all(s != "fail" for s, _ in self.results.values())

    def failed(self) -> list:
        return [k for k, (s, _) in self.results.items() if s == "fail"]


def penalty_rank_ok(rank_F: int, a_eps: float, n: int, p: int, q: int) -> bool:
    if rank_F >= 2:
        return True
    if rank_F == 1:
        return a_eps / 2 + n / 2 - p / 2 - q / 2 > 0.5
    return False


def validate_conditions(spec: ModelSpec) -> ConditionReport:
    """Check symmetry/definiteness, penalty rank, basis rank, design rank and commutation."""
    F, W, X = spec.F, spec.W, spec.X
    n, p, q = spec.n, spec.p, spec.q
    res = {}
    if q == 0:
        res["symmetric_nnd_penalty"] = ("n/a", "empty basis")
        res["penalty_rank"] = ("n/a", "empty basis")
        res["basis_rank"] = ("n/a", "empty basis")
    else:
        scale = max(1.0, float(np.abs(F).max()))
        asym = float(np.abs(F - F.T).max())
        min_eig = float(np.linalg.eigvalsh(0.5 * (F + F.T)).min())
        ok1 = asym <= 1e-10 * scale and min_eig >= -1e-10 * scale
        res["symmetric_nnd_penalty"] = ("pass" if ok1 else "fail", f"asymmetry={asym:.3g}, min eigenvalue={min_eig:.3g}")
        rk = spec.rank_F
        ok2 = penalty_rank_ok(rk, spec.priors.a_eps, n, p, q)
        res["penalty_rank"] = ("pass" if ok2 else "fail", f"rank(F)={rk}")
        rw = int(np.linalg.matrix_rank(W))
        ok3 = rw == q and q <= n - p
        res["basis_rank"] = ("pass" if ok3 else "fail", f"rank(W)={rw}, q={q}, n-p={n - p}")
    rx = int(np.linalg.matrix_rank(X)) if p else 0
    res["design_rank"] = ("pass" if rx == p and p < n else "fail", f"rank(X)={rx}, p={p}, n={n}")
    if q == 0:
        res["commuting"] = ("n/a", "empty basis")
    else:
        G = W.T @ W
        comm = float(np.abs(F @ G - G @ F).max())
        scale = max(1.0, float(np.abs(F).max()) * float(np.abs(G).max()))
        res["commuting"] = ("pass" if comm <= 1e-8 * scale else "fail", f"commutator max={comm:.3g}")
    if spec.basis is not None and spec.basis.q:
        err = spec.basis.orthogonality_error(spec.design)
        res["restriction"] = ("pass" if err <= 1e-8 else "fail", f"max |X'W|={err:.3g}")
    return ConditionReport(res)


def _has_constant_column(X: np.ndarray) -> bool:
    return bool(np.any(np.ptp(X, axis=0) == 0)) if X.size else False


def make_custom(design: DesignMatrix, W, F, priors: PriorConfig | None = None, family: str = "gaussian",
                offset=None, restricted: bool = False) -> ModelSpec:
    """Wrap an arbitrary ``(W, F)`` pair after basic shape checks."""
    W = np.asarray(W, dtype=float).reshape(design.n, -1)
    F = np.asarray(F, dtype=float).reshape(W.shape[1], W.shape[1])
    priors = priors or PriorConfig.default(family)
    basis = SpatialBasis(W=W, kind="Custom") if restricted else None
    return ModelSpec(design, W, F, family, priors, "Custom", _offset(offset, design.n), basis)


def _offset(offset, n):
    if offset is None:
        return None
    off = np.asarray(offset, dtype=float)
    if off.shape != (n,) or not np.all(np.isfinite(off)):
        raise InvalidParameter("offset must be a finite n-vector of log expected counts")
    return off


def make_model(kind: str, graph: AdjacencyGraph | None, design: DesignMatrix, priors: PriorConfig | None = None,
               family: str = "gaussian", q: int | None = None, offset=None, iwls_weights=None,
               attractive_only: bool = False) -> ModelSpec:
    """Construct one of the NS, ICAR, RHZ or HH models.

    Parameters
    ----------
    kind : {"NS", "ICAR", "RHZ", "HH"}
        Case-insensitive.
    graph : AdjacencyGraph or None
        Required for the spatial kinds; must be connected.
    design : DesignMatrix
        For ICAR a leading intercept column is dropped.
    priors : PriorConfig, optional
        Defaults depend on `family`.
    family : {"gaussian", "poisson"}
    q : int, optional
        HH basis size; default ``ceil(0.1 n)``.
    offset : array_like, optional
        Log expected counts (Poisson only).
    iwls_weights : array_like, optional
        Final IWLS weights of the non-spatial Poisson fit. Needed for
        Poisson RHZ and HH, whose bases are weighted.
    attractive_only : bool
        Limit HH to eigenvectors with positive Moran eigenvalue.

    Raises
    ------
    ImplicitInterceptConflict
        ICAR with a constant covariate column other than a flagged intercept.
    InvalidPenaltyRank
        When the penalty rank would leave the posterior improper.
    """
    kind = {k.upper(): k for k in KINDS}.get(str(kind).upper())
    if kind is None or kind == "Custom":
        raise InvalidParameter("kind must be one of NS, ICAR, RHZ, HH (use make_custom for others)")
    if family not in FAMILIES:
        raise InvalidParameter(f"family must be one of {FAMILIES}")
    priors = priors or PriorConfig.default(family)
    off = _offset(offset, design.n)
    if off is not None and family != "poisson":
        raise InvalidParameter("offsets apply only to Poisson models")
    n = design.n
    if kind != "NS":
        if graph is None:
            raise InvalidParameter(f"{kind} needs an adjacency graph")
        if graph.n != n:
            raise InvalidParameter(f"graph has {graph.n} vertices but the design has {n} rows")
        require_connected(graph)
    notes = []

    if kind == "NS":
        W, F, basis, Q, s = np.zeros((n, 0)), np.zeros((0, 0)), None, None, None
    elif kind == "ICAR":
        if design.with_intercept:
            design = design.drop_intercept()
        if _has_constant_column(design.X):
            raise ImplicitInterceptConflict(
                "ICAR absorbs the intercept into the random effect; remove the constant covariate column"
            )
        Q = graph.laplacian()
        W, F, basis, s = np.eye(n), Q.copy(), None, np.ones(n)
        if priors.flat_beta:
            notes.append("posterior propriety assumed (flat beta prior with improper ICAR prior)")
    else:
        Q = graph.laplacian()
        if family == "gaussian":
            if kind == "RHZ":
                basis = complement_basis(design)
            else:
                basis = hh_basis(graph, design, q, attractive_only=attractive_only)
            W = basis.W
            F = W.T @ Q @ W
            F = 0.5 * (F + F.T)
            s = np.ones(n)
        else:
            if iwls_weights is None:
                raise InvalidParameter(f"Poisson {kind} needs the IWLS weights of the non-spatial fit")
            w = np.asarray(iwls_weights, dtype=float)
            if kind == "RHZ":
                basis = count_rhz_basis(design, w, graph)
            else:
                basis = count_hh_basis(graph, design, 1.0 / w, q, attractive_only=attractive_only)
            W, F, s = basis.effective, basis.F, basis.node_scale

    spec = ModelSpec(design, W, F, family, priors, kind, off, basis, Q if kind != "NS" else None, s, tuple(notes))
    if spec.q and not penalty_rank_ok(spec.rank_F, priors.a_eps, n, spec.p, spec.q):
        raise InvalidPenaltyRank(
            f"rank(F)={spec.rank_F} with n={n}, p={spec.p}, q={spec.q} does not keep the posterior proper"
        )
    return spec

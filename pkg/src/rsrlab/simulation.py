"""Simulation studies comparing NS, RHZ and ICAR analyses.

Three studies share one layout. Covariates are drawn once per study,
responses are redrawn per replicate under each generating model, and
every replicate is analysed with each analysis model.

* ``sim1``: Gaussian, 48-state graph, ``Y = 1 + 2 X1 + nu + eps``.
* ``sim2``: Gaussian, adds ``X2`` with coefficient 0. Under NS
  generation the non-spatial and RHZ fits omit ``X1``.
* ``sim3``: Poisson log link on a 194-vertex graph, ``beta = (1, 1, 0)``,
  otherwise as ``sim2``.

The ``*_small`` variants use ``beta0 = .1`` and ``beta1 = .2``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytics import QUANTILE_METHOD
from .bases import DesignMatrix, complement_basis
from .errors import InvalidParameter, IwlsDiverged, MomentUndefined, NumericalFailure
from .graph import AdjacencyGraph, LaplacianEigen, laplacian_eigen, require_connected, sample_icar, sorted_eigh
from .model import PriorConfig, make_model
from .samplers import ChainConfig, gibbs_gaussian_batch, mh_poisson_batch, proposal_fisher

KINDS = ("NS", "RHZ", "ICAR")
STUDY_IDS = {"sim1": 1, "sim2": 2, "sim3": 3, "sim1_small": 11, "sim2_small": 12, "sim3_small": 13}

# seed purposes
_COVARIATES, _RESPONSE, _CHAIN = 0, 1, 2


# -------------------------------------------------------------- covariates


@dataclass(frozen=True)
class CovariateRecipe:
    """How to build a covariate from Laplacian eigenvectors.

    Attributes
    ----------
    k : int
        Number of targeted eigenvectors.
    indices : tuple of int, optional
        Custom eigenvector positions (descending eigenvalue order). When
        empty the k eigenvectors with smallest nonzero eigenvalue are used.
    s_l, l_bar : float
        Sample standard deviation and sample mean of the result.
    """

    k: int
    indices: tuple = ()
    s_l: float = 1.0
    l_bar: float = 0.0

    def targets(self, n: int) -> np.ndarray:
        if self.indices:
            idx = np.asarray(self.indices, dtype=int)
            if idx.size != self.k or np.any(idx < 0) or np.any(idx >= n - 1):
                raise InvalidParameter("custom indices must be k positions in [0, n-1)")
            return idx
        if not 0 <= self.k <= n - 1:
            raise InvalidParameter(f"k must lie in [0, {n - 1}], got {self.k}")
        # last position is the kernel; the k before it have the smallest nonzero eigenvalues
        return np.arange(n - 1 - self.k, n - 1)


def random_rho(n: int, idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit vector supported on `idx`, magnitudes uniform, signs random."""
    rho = np.zeros(n)
    if idx.size == 0:
        return rho
    mag = rng.uniform(0.0, 1.0, idx.size)
    sign = rng.choice([-1.0, 1.0], idx.size)
    rho[idx] = mag * sign
    return rho / np.linalg.norm(rho)


def compose_covariate(eig: LaplacianEigen, rho, s_l: float = 1.0, l_bar: float = 0.0) -> np.ndarray:
    """``s_l sqrt(n-1) V rho + 1 l_bar``."""
    n = eig.n
    return s_l * math.sqrt(n - 1) * (eig.V @ np.asarray(rho, dtype=float)) + l_bar


def decompose_covariate(eig: LaplacianEigen, l):
    """Inverse of :func:`compose_covariate`: returns ``(s_l, l_bar, rho)``.

    ``rho_i`` is the sample correlation between l and eigenvector i, and
    the kernel entry is zero.
    """
    l = np.asarray(l, dtype=float)
    n = l.size
    l_bar = float(l.mean())
    s_l = float(l.std(ddof=1))
    rho = eig.V.T @ (l - l_bar) / (math.sqrt(n - 1) * s_l)
    rho[eig.zero_mask] = 0.0
    return s_l, l_bar, rho


def gen_covariate(eig: LaplacianEigen, recipe: CovariateRecipe, rng: np.random.Generator) -> np.ndarray:
    """Covariate correlated with the targeted Laplacian eigenvectors."""
    rho = random_rho(eig.n, recipe.targets(eig.n), rng)
    return compose_covariate(eig, rho, recipe.s_l, recipe.l_bar)


# --------------------------------------------------------------- responses


class SpatialEffect:
    """Draws of the spatial term ``nu`` under one generating model.

    ``RHZ`` draws ``L delta`` with delta Gaussian of precision
    ``tau_s L'QL`` (L an orthonormal basis of the complement of the full
    design). ``ICAR`` draws from the intrinsic CAR prior. ``NS`` is zero.
    """

    def __init__(self, kind: str, graph: AdjacencyGraph, design: DesignMatrix, eig: LaplacianEigen | None = None):
        kind = kind.upper()
        if kind not in KINDS:
            raise InvalidParameter(f"unknown generating model {kind!r}")
        self.kind = kind
        self.n = graph.n
        self.eig = eig or laplacian_eigen(graph)
        if kind == "RHZ":
            L = complement_basis(design).W
            lam, U = sorted_eigh(L.T @ self.eig.Q @ L)
            if lam[-1] <= 0:
                raise NumericalFailure("L'QL is singular; cannot draw the RHZ effect")
            # delta = U diag(lam^-1/2) z has precision L'QL
            self.factor = L @ (U / np.sqrt(lam))

    def draw(self, rng: np.random.Generator, tau_s: float = 1.0) -> np.ndarray:
        if self.kind == "NS":
            return np.zeros(self.n)
        if self.kind == "ICAR":
            return sample_icar(self.eig, tau_s, rng)
        z = rng.standard_normal(self.factor.shape[1])
        return self.factor @ z / math.sqrt(tau_s)


def gen_response(kind: str, graph: AdjacencyGraph, X, betas, tau_s: float = 1.0, family: str = "gaussian",
                 rng: np.random.Generator | None = None, effect: SpatialEffect | None = None, offset=None):
    """One response vector under the NS, RHZ or ICAR generating model.

    Parameters
    ----------
    X : DesignMatrix or array_like
        Full generating design (intercept included as a column).
    betas : array_like
        Coefficients for the columns of X.
    effect : SpatialEffect, optional
        Prebuilt effect sampler, reused across replicates.
    """
    rng = rng if rng is not None else np.random.default_rng()
    d = X if isinstance(X, DesignMatrix) else DesignMatrix(np.asarray(X, dtype=float))
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (d.X.shape[1],):
        raise InvalidParameter(f"{betas.size} coefficients for {d.X.shape[1]} design columns")
    effect = effect or SpatialEffect(kind, graph, d)
    lin = d.X @ betas + effect.draw(rng, tau_s)
    if offset is not None:
        lin = lin + offset
    if family == "gaussian":
        return lin + rng.standard_normal(lin.size)
    if family == "poisson":
        return rng.poisson(np.exp(lin)).astype(float)
    raise InvalidParameter(f"unknown family {family!r}")


# ----------------------------------------------------------- study layout


@dataclass(frozen=True)
class StudyDesign:
    """Fixed ingredients of one simulation study."""

    name: str
    family: str
    beta0: float
    beta1: float
    with_x2: bool
    k1_frac: float = 0.2
    k2_frac: float = 0.5

    @property
    def truth(self):
        b = [self.beta0, self.beta1] + ([0.0] if self.with_x2 else [])
        return np.array(b)


STUDIES = {
    "sim1": StudyDesign("sim1", "gaussian", 1.0, 2.0, False),
    "sim2": StudyDesign("sim2", "gaussian", 1.0, 2.0, True),
    "sim3": StudyDesign("sim3", "poisson", 1.0, 1.0, True),
    "sim1_small": StudyDesign("sim1_small", "gaussian", 0.1, 0.2, False),
    "sim2_small": StudyDesign("sim2_small", "gaussian", 0.1, 0.2, True),
    "sim3_small": StudyDesign("sim3_small", "poisson", 0.1, 0.2, True),
}

DESK_SCALE = {"gaussian": (200, 20000), "poisson": (50, 200000)}
PAPER_SCALE = {"gaussian": (1000, 80000), "poisson": (100, 1000000)}


def seed_for(master: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def study_covariates(study: StudyDesign, eig: LaplacianEigen, master: int):
    """The covariates of a study, drawn once from the master seed."""
    n = eig.n
    rng = np.random.default_rng(seed_for(master, STUDY_IDS[study.name], _COVARIATES))
    x1 = gen_covariate(eig, CovariateRecipe(math.ceil(study.k1_frac * n)), rng)
    if not study.with_x2:
        return x1, None
    x2 = gen_covariate(eig, CovariateRecipe(math.ceil(study.k2_frac * n)), rng)
    return x1, x2


@dataclass
class AnalysisLayout:
    """Design used by one analysis model under one generating model.

    ``cols`` maps each design column to the index of the generating
    coefficient it estimates (0 intercept, 1 for X1, 2 for X2).
    """

    design: DesignMatrix
    cols: tuple


def analysis_layout(study: StudyDesign, gen: str, kind: str, x1, x2) -> AnalysisLayout:
    omit_x1 = study.with_x2 and gen == "NS" and kind != "ICAR"
    cov, names, cols = [], [], []
    if not omit_x1:
        cov.append(x1), names.append("x1"), cols.append(1)
    if study.with_x2:
        cov.append(x2), names.append("x2"), cols.append(2)
    Z = np.column_stack(cov)
    if kind == "ICAR":
        return AnalysisLayout(DesignMatrix(Z, False, tuple(names)), tuple(cols))
    return AnalysisLayout(DesignMatrix.with_ones(Z, tuple(names)), (0, *cols))


# --------------------------------------------------------------- metrics


def agreement_classify(ci_rhz, ci_ns, truth: float) -> str:
    """``"Agree"``, ``"RHZ+"`` or ``"NS+"`` for one pair of intervals."""
    r = ci_rhz[0] <= truth <= ci_rhz[1]
    s = ci_ns[0] <= truth <= ci_ns[1]
    if r == s:
        return "Agree"
    return "RHZ+" if r else "NS+"


def _pct(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    return float(100.0 * mask.mean()) if mask.size else float("nan")


@dataclass
class ReplicateFit:
    """Posterior summary of one replicate under one analysis model."""

    gen: str
    kind: str
    rep: int
    coef: int  # generating coefficient index
    truth: float
    mean: float
    variance: float
    lower: float
    upper: float
    failed: bool = False


@dataclass
class CellSummary:
    gen: str
    kind: str
    n_fits: int
    n_failed: int
    coverage: float
    power: float
    type_s: float
    bias_p10: float
    bias_p90: float
    mse: float


@dataclass
class Comparison:
    """RHZ versus NS intervals for one generating model and coefficient."""

    gen: str
    coef: int
    agree: float
    rhz_plus: float
    ns_plus: float
    nesting: float
    max_gap: float
    gap_below_05: float
    n: int


@dataclass
class SimulationReport:
    study: str
    replicates: int
    chain: dict
    master_seed: int
    fits: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)

    def cell(self, gen: str, kind: str) -> CellSummary:
        for c in self.cells:
            if c.gen == gen and c.kind == kind:
                return c
        raise KeyError((gen, kind))

    def comparison(self, gen: str, coef: int) -> Comparison:
        for c in self.comparisons:
            if c.gen == gen and c.coef == coef:
                return c
        raise KeyError((gen, coef))

    # ----- output

    def fits_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study", "gen", "analysis", "rep", "coef", "truth", "mean", "variance", "lower", "upper", "failed"])
        for f in self.fits:
            w.writerow([self.study, f.gen, f.kind, f.rep, f.coef, _fmt(f.truth), _fmt(f.mean), _fmt(f.variance),
                        _fmt(f.lower), _fmt(f.upper), int(f.failed)])
        return buf.getvalue()

    def cells_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study", "gen", "analysis", "n_fits", "n_failed", "coverage", "power", "type_s",
                    "bias_p10", "bias_p90", "mse"])
        for c in self.cells:
            w.writerow([self.study, c.gen, c.kind, c.n_fits, c.n_failed, _fmt(c.coverage), _fmt(c.power),
                        _fmt(c.type_s), _fmt(c.bias_p10), _fmt(c.bias_p90), _fmt(c.mse)])
        return buf.getvalue()

    def comparisons_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study", "gen", "coef", "n", "agree", "rhz_plus", "ns_plus", "nesting", "max_gap", "gap_below_05"])
        for c in self.comparisons:
            w.writerow([self.study, c.gen, c.coef, c.n, _fmt(c.agree), _fmt(c.rhz_plus), _fmt(c.ns_plus),
                        _fmt(c.nesting), _fmt(c.max_gap), _fmt(c.gap_below_05)])
        return buf.getvalue()

    def table(self) -> str:
        """Plain-text tables laid out as analysis rows by generating columns."""
        gens = [g for g in KINDS if any(c.gen == g for c in self.cells)]
        out = [f"{self.study}: {self.replicates} replicates, {self.chain['iterations']} iterations "
               f"(burn-in {self.chain['burn_in']}), seed {self.master_seed}", ""]

        def block(title, getter, fmt="{:.1f}%"):
            lines = [title, f"{'Analysis':<10}" + "".join(f"{g:>16}" for g in gens)]
            for k in KINDS:
                row = f"{k:<10}"
                for g in gens:
                    try:
                        v = getter(self.cell(g, k))
                    except KeyError:
                        v = None
                    row += f"{'-' if v is None or _isnan(v) else fmt.format(*np.atleast_1d(v)):>16}"
                lines.append(row)
            return lines + [""]

        out += block("Coverage of beta1", lambda c: c.coverage)
        if any(not _isnan(c.type_s) for c in self.cells):
            out += block("Type-S error of beta2", lambda c: c.type_s)
        out += block("Power for beta1", lambda c: c.power)
        out += block("10th and 90th percentiles of bias for beta1", lambda c: (c.bias_p10, c.bias_p90),
                     "({:.2f},{:.2f})")
        out += block("Average MSE of beta1", lambda c: c.mse, "{:.3f}")
        for coef, title in ((1, "coverage of beta1"), (2, "Type-S of beta2")):
            comps = [c for c in self.comparisons if c.coef == coef]
            if not comps:
                continue
            out.append(f"RHZ vs NS, {title}")
            out.append(f"{'':<10}" + "".join(f"{c.gen:>16}" for c in comps))
            for lab, attr in (("Agree", "agree"), ("RHZ +", "rhz_plus"), ("NS +", "ns_plus"),
                              ("Nested", "nesting")):
                out.append(f"{lab:<10}" + "".join(f"{getattr(c, attr):>15.1f}%" for c in comps))
            out.append("")
        return "\n".join(out)


def _fmt(v) -> str:
    return "nan" if _isnan(v) else repr(float(v))


def _isnan(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def summarize_fits(fits, gens, kinds) -> tuple[list, list]:
    """Cell metrics and RHZ-vs-NS comparisons from replicate fits."""
    cells, comps = [], []
    for gen in gens:
        for kind in kinds:
            sel = [f for f in fits if f.gen == gen and f.kind == kind]
            reps = {f.rep for f in sel}
            failed = {f.rep for f in sel if f.failed}
            ok = [f for f in sel if not f.failed]
            b1 = [f for f in ok if f.coef == 1]
            b2 = [f for f in ok if f.coef == 2]
            cover = [f.lower <= f.truth <= f.upper for f in b1]
            power = [not (f.lower <= 0.0 <= f.upper) for f in b1]
            type_s = [not (f.lower <= 0.0 <= f.upper) for f in b2]
            bias = np.array([f.truth - f.mean for f in b1])
            cells.append(CellSummary(
                gen, kind, len(reps), len(failed), _pct(cover), _pct(power), _pct(type_s),
                float(np.percentile(bias, 10)) if bias.size else float("nan"),
                float(np.percentile(bias, 90)) if bias.size else float("nan"),
                float(np.mean(bias**2)) if bias.size else float("nan")))
        for coef in (1, 2):
            rz = {f.rep: f for f in fits if f.gen == gen and f.kind == "RHZ" and f.coef == coef and not f.failed}
            ns = {f.rep: f for f in fits if f.gen == gen and f.kind == "NS" and f.coef == coef and not f.failed}
            common = sorted(set(rz) & set(ns))
            if not common:
                continue
            truth = rz[common[0]].truth
            cls = [agreement_classify((rz[r].lower, rz[r].upper), (ns[r].lower, ns[r].upper), truth) for r in common]
            nest = [ns[r].lower <= rz[r].lower and rz[r].upper <= ns[r].upper for r in common]
            gap = np.array([max(abs(rz[r].lower - ns[r].lower), abs(rz[r].upper - ns[r].upper)) for r in common])
            comps.append(Comparison(gen, coef, _pct([c == "Agree" for c in cls]), _pct([c == "RHZ+" for c in cls]),
                                    _pct([c == "NS+" for c in cls]), _pct(nest), float(gap.max()),
                                    _pct(gap < 0.05), len(common)))
    return cells, comps


# ----------------------------------------------------------------- runner


def _chain_seeds(master, study_id, gen_i, kind_i, reps):
    return [int(seed_for(master, study_id, _CHAIN, gen_i, kind_i, r).generate_state(1, np.uint64)[0]) for r in reps]


def _fit_gaussian(spec, Ys, cfg, seeds, alpha):
    outs = gibbs_gaussian_batch(spec, Ys, cfg, seeds)
    res = []
    for o in outs:
        if o.failed_at is not None:
            res.append(None)
            continue
        lo, hi = np.quantile(o.beta_samples, [alpha / 2, 1 - alpha / 2], axis=0, method=QUANTILE_METHOD)
        res.append((o.beta_samples.mean(axis=0), o.beta_samples.var(axis=0, ddof=1), lo, hi))
    return res


def _fit_poisson(kind, graph, layout, Ys, cfg, seeds, alpha, priors):
    specs, covs, idx = [], [], []
    res = [None] * len(Ys)
    for r, Y in enumerate(Ys):
        try:
            if kind == "RHZ":
                base = make_model("NS", None, layout.design, priors, family="poisson")
                fit = proposal_fisher(base, Y)
                spec = make_model("RHZ", graph, layout.design, priors, family="poisson", iwls_weights=fit.h_diag)
            else:
                spec = make_model(kind, graph, layout.design, priors, family="poisson")
                fit = proposal_fisher(spec, Y)
        except (IwlsDiverged, NumericalFailure):
            continue
        specs.append(spec)
        covs.append(fit.covariance)
        idx.append(r)
    if not specs:
        return res
    outs = mh_poisson_batch(specs, Ys[idx], cfg, [seeds[r] for r in idx], covs)
    for r, o in zip(idx, outs):
        if o.failed_at is not None:
            continue
        lo, hi = np.quantile(o.beta_samples, [alpha / 2, 1 - alpha / 2], axis=0, method=QUANTILE_METHOD)
        res[r] = (o.beta_samples.mean(axis=0), o.beta_samples.var(axis=0, ddof=1), lo, hi)
    return res


def run_simulation(study: str | StudyDesign, graph: AdjacencyGraph, replicates: int, cfg: ChainConfig,
                   master_seed: int = 2024, gens=KINDS, kinds=KINDS, alpha: float = 0.05,
                   priors: PriorConfig | None = None, log=None) -> SimulationReport:
    """Run one study and summarize it.

    Replicates are fitted as batches of independent chains (one per
    replicate). A replicate whose chain degenerates is flagged and left
    out of the metrics; the count is reported per cell.
    """
    study = STUDIES[study] if isinstance(study, str) else study
    if replicates < 1:
        raise InvalidParameter("need at least one replicate")
    require_connected(graph)
    say = log or (lambda s: None)
    sid = STUDY_IDS[study.name]
    priors = priors or PriorConfig.default(study.family)
    eig = laplacian_eigen(graph)
    x1, x2 = study_covariates(study, eig, master_seed)
    full = DesignMatrix.with_ones(np.column_stack([x1] + ([x2] if x2 is not None else [])),
                                  ("x1", "x2")[: 1 + study.with_x2])
    truth = study.truth
    report = SimulationReport(study.name, replicates, {"iterations": cfg.iterations, "burn_in": cfg.burn_in,
                                                       "delta_step": cfg.delta_step}, master_seed)
    for gi, gen in enumerate(KINDS):
        if gen not in gens:
            continue
        effect = SpatialEffect(gen, graph, full, eig)
        Ys = np.empty((replicates, graph.n))
        for r in range(replicates):
            rng = np.random.default_rng(seed_for(master_seed, sid, _RESPONSE, gi, r))
            Ys[r] = gen_response(gen, graph, full, truth, 1.0, study.family, rng, effect)
        for ki, kind in enumerate(KINDS):
            if kind not in kinds:
                continue
            layout = analysis_layout(study, gen, kind, x1, x2)
            seeds = _chain_seeds(master_seed, sid, gi, ki, range(replicates))
            if study.family == "gaussian":
                spec = make_model(kind, graph, layout.design, priors)
                res = _fit_gaussian(spec, Ys, cfg, seeds, alpha)
            else:
                res = _fit_poisson(kind, graph, layout, Ys, cfg, seeds, alpha, priors)
            for r, out in enumerate(res):
                for j, coef in enumerate(layout.cols):
                    if out is None:
                        report.fits.append(ReplicateFit(gen, kind, r, coef, truth[coef], *(float("nan"),) * 4, True))
                    else:
                        m, v, lo, hi = out
                        report.fits.append(ReplicateFit(gen, kind, r, coef, float(truth[coef]), float(m[j]),
                                                        float(v[j]), float(lo[j]), float(hi[j])))
            n_bad = sum(o is None for o in res)
            say(f"{study.name}: generating {gen}, analysis {kind}: {replicates} replicates"
                + (f", {n_bad} failed" if n_bad else ""))
    report.cells, report.comparisons = summarize_fits(report.fits, [g for g in KINDS if g in gens],
                                                      [k for k in KINDS if k in kinds])
    return report


def read_fits_csv(text: str):
    """Parse :meth:`SimulationReport.fits_csv` output back into fits."""
    rows = list(csv.DictReader(io.StringIO(text)))
    fits = [ReplicateFit(r["gen"], r["analysis"], int(r["rep"]), int(r["coef"]), float(r["truth"]),
                         float(r["mean"]), float(r["variance"]), float(r["lower"]), float(r["upper"]),
                         bool(int(r["failed"]))) for r in rows]
    study = rows[0]["study"] if rows else ""
    return study, fits


# ------------------------------------------------------------ overfit demo


@dataclass
class OverfitStep:
    added: int
    mean: np.ndarray
    variance: np.ndarray
    sigma_mean: float


def overfit_demo(X_star, Y, priors: PriorConfig | None = None, order: str = "correlation"):
    """Posterior variances of a non-spatial fit as synthetic covariates are added.

    Synthetic covariates are columns of an orthonormal basis of the
    complement of C(X*), ordered by decreasing absolute correlation with
    the residual ``P_perp Y`` (or kept in basis order with
    ``order="basis"``). Columns are added one at a time until the
    posterior mean of sigma would no longer be defined, i.e. while
    ``(a_eps - 1) + (n - p - k)/2 > 0`` for k added columns.

    Under the flat beta prior, ``Var(beta | Y) = (X'X)^{-1} E(sigma | Y)``.
    """
    priors = priors or PriorConfig()
    d = X_star if isinstance(X_star, DesignMatrix) else DesignMatrix(np.asarray(X_star, dtype=float))
    Y = np.asarray(Y, dtype=float)
    X = d.X
    n, p = X.shape
    L = complement_basis(d).W
    resid = Y - X @ np.linalg.lstsq(X, Y, rcond=None)[0]
    if order == "correlation":
        # columns of L are mean-zero when X* has an intercept, so |corr| ranks by |L' e|
        score = np.abs(L.T @ resid) / np.maximum(np.linalg.norm(L - L.mean(axis=0), axis=0), 1e-300)
        L = L[:, np.argsort(-score, kind="stable")]
    elif order != "basis":
        raise InvalidParameter(f"unknown ordering {order!r}")
    steps = []
    for k in range(0, n - p):
        den = (priors.a_eps - 1.0) + 0.5 * (n - p - k)
        if den <= 0:
            break
        Xk = np.column_stack([X, L[:, :k]]) if k else X
        XtX_inv = np.linalg.inv(Xk.T @ Xk)
        beta = XtX_inv @ (Xk.T @ Y)
        rss = float(np.sum((Y - Xk @ beta) ** 2))
        s = (1.0 / priors.b_eps + 0.5 * rss) / den
        steps.append(OverfitStep(k, beta[:p], np.diag(XtX_inv)[:p] * s, s))
    if not steps:
        raise MomentUndefined("the posterior mean of sigma is undefined even without synthetic covariates")
    return steps


def overfit_csv(steps, names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["added", "sigma_mean"] + [f"mean_{nm}" for nm in names] + [f"var_{nm}" for nm in names])
    for s in steps:
        w.writerow([s.added, _fmt(s.sigma_mean)] + [_fmt(v) for v in s.mean] + [_fmt(v) for v in s.variance])
    return buf.getvalue()


def chain_config_dict(cfg: ChainConfig) -> dict:
    return asdict(cfg)

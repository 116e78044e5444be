"""MCMC for the spatial regression family.

Two engines are provided, both vectorized over a leading chain axis so
that many replicates sharing a model structure advance together:

* a Gibbs sampler for Gaussian responses cycling the exact conjugate
  full conditionals of beta, delta, tau_s and tau_eps;
* a Metropolis-within-Gibbs sampler for Poisson responses with random
  walk updates for beta and delta and a Gibbs update for tau_s.

Each chain owns its own ``numpy.random.Generator``. Random variates are
drawn per chain in fixed-size blocks, so the stream a chain consumes
does not depend on which other chains share the batch.

Gamma conditionals use the shape/scale prior of :class:`PriorConfig`,
i.e. ``tau | . ~ Gamma(shape = a + k/2, rate = 1/b + quad/2)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import InvalidParameter, NumericalFailure
from .iwls import IwlsFit, iwls_poisson
from .model import ModelSpec

CHUNK = 256
ACCEPT_RANGE = (0.05, 0.7)
TARGET_ACCEPT = 0.25


@dataclass(frozen=True)
class ChainConfig:
    """Run length and tuning.

    `burn_in` defaults to 10% of `iterations`. `delta_step` is the
    initial scale of the Poisson delta random walk; with `adapt_burn_in`
    it is tuned towards 25% acceptance during burn-in and then frozen.
    """

    iterations: int = 20000
    burn_in: int | None = None
    seed: int = 0
    delta_step: float = 0.1
    adapt_burn_in: bool = True
    store_delta: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidParameter("iterations must be positive")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 10)
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidParameter(f"burn_in must lie in [0, iterations), got {self.burn_in}")
        if not self.delta_step > 0:
            raise InvalidParameter("delta_step must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameter("seed must fit in 64 unsigned bits")

    @property
    def retained(self) -> int:
        return self.iterations - self.burn_in


@dataclass
class ChainOutput:
    """Retained draws of one chain.

    Attributes
    ----------
    beta_samples : ndarray, shape (m, p)
    tau_s_samples : ndarray, shape (m,) or None
        ``None`` for models without a spatial effect.
    tau_eps_samples : ndarray, shape (m,) or None
        ``None`` for Poisson models.
    delta_samples : ndarray, shape (m, q) or None
        Only kept when requested.
    acceptance_rates : dict
        Post burn-in acceptance per Metropolis block.
    seed : int
    burn_in : int
    warnings : list of str
    failed_at : int or None
        Iteration at which the chain broke down, if it did.
    """

    beta_samples: np.ndarray
    tau_s_samples: np.ndarray | None
    tau_eps_samples: np.ndarray | None
    seed: int
    burn_in: int
    delta_samples: np.ndarray | None = None
    acceptance_rates: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failed_at: int | None = None
    delta_step: float | None = None

    @property
    def m(self) -> int:
        return self.beta_samples.shape[0]


def chain_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


# ---------------------------------------------------------------- Gaussian


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Quantities shared by all chains for one Gaussian model.

    The basis is rotated to ``B = W U`` with ``U' W'W U = I`` and
    ``U' F U = diag(zeta)``, in which the delta conditional factorizes.
    """

    X: np.ndarray
    XE: np.ndarray
    e: np.ndarray
    E: np.ndarray
    B: np.ndarray
    U: np.ndarray
    zeta: np.ndarray
    rank_F: int
    prior_prec: float


def gaussian_kernel(spec: ModelSpec) -> GaussianKernel:
    if spec.family != "gaussian":
        raise InvalidParameter("Gibbs sampling needs a Gaussian model")
    X = spec.X
    e, E = np.linalg.eigh(X.T @ X)
    q = spec.q
    if q:
        G = spec.W.T @ spec.W
        try:
            zeta, U = linalg.eigh(0.5 * (spec.F + spec.F.T), 0.5 * (G + G.T))
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalFailure(f"W'W is not positive definite: {exc}") from None
        tol = 1e-12 * max(1.0, np.abs(zeta).max())
        if zeta.min() < -max(tol, 1e-9 * np.abs(zeta).max()):
            raise NumericalFailure("penalty F is not non-negative definite")
        zeta = np.where(np.abs(zeta) <= tol, 0.0, np.maximum(zeta, 0.0))
        B = spec.W @ U
    else:
        zeta, U, B = np.zeros(0), np.zeros((0, 0)), np.zeros((spec.n, 0))
    pp = 0.0 if spec.priors.flat_beta else 1.0 / spec.priors.beta_sd**2
    return GaussianKernel(X, X @ E, e, E, B, U, zeta, spec.rank_F, pp)


def gibbs_gaussian(spec: ModelSpec, Y, cfg: ChainConfig) -> ChainOutput:
    """Run one Gibbs chain; raises :class:`NumericalFailure` on breakdown."""
    out = gibbs_gaussian_batch(spec, np.asarray(Y, dtype=float)[None, :], cfg, [cfg.seed])[0]
    if out.failed_at is not None:
        raise NumericalFailure(f"Gibbs chain degenerated at iteration {out.failed_at}", out.failed_at)
    return out


def gibbs_gaussian_batch(spec: ModelSpec, Ys, cfg: ChainConfig, seeds) -> list[ChainOutput]:
    """Run one Gibbs chain per row of `Ys`, all under the same model.

    Update order per sweep: beta, delta, tau_s, tau_eps. Chains that
    degenerate (non-finite state) are frozen and reported through
    ``ChainOutput.failed_at`` rather than raising.
    """
    Ys = np.atleast_2d(np.asarray(Ys, dtype=float))
    R, n = Ys.shape
    if n != spec.n or len(seeds) != R:
        raise InvalidParameter("responses and seeds must match the model and each other")
    if not np.all(np.isfinite(Ys)):
        raise InvalidParameter("responses must be finite")
    k = gaussian_kernel(spec)
    pr = spec.priors
    p, q = spec.p, spec.q
    spatial = q > 0
    gens = [chain_generator(s) for s in seeds]
    shape_s = pr.a_s + k.rank_F / 2.0
    shape_e = pr.a_eps + n / 2.0

    # start at least squares with unit spatial precision
    XtY = Ys @ k.XE
    beta = (XtY / np.where(k.e > 0, k.e, 1.0)) @ k.E.T
    res0 = Ys - beta @ k.X.T
    tau_e = 1.0 / np.maximum(np.mean(res0**2, axis=1), 1e-12)
    tau_s = np.ones(R)
    eta = np.zeros((R, q))

    m = cfg.retained
    b_out = np.empty((R, m, p))
    te_out = np.empty((R, m))
    ts_out = np.empty((R, m)) if spatial else None
    d_out = np.empty((R, m, q)) if (cfg.store_delta and spatial) else None
    failed = np.full(R, -1)

    it = 0
    while it < cfg.iterations:
        C = min(CHUNK, cfg.iterations - it)
        Z = np.empty((C, R, p + q))
        Gs = np.empty((C, R))
        Ge = np.empty((C, R))
        for r, g in enumerate(gens):
            Z[:, r, :] = g.standard_normal((C, p + q))
            Gs[:, r] = g.standard_gamma(shape_s, C) if spatial else 0.0
            Ge[:, r] = g.standard_gamma(shape_e, C)
        for c in range(C):
            # beta | delta, tau_eps in the eigenbasis of X'X
            t = (Ys - eta @ k.B.T) @ k.XE
            prec = tau_e[:, None] * k.e + k.prior_prec
            beta = ((tau_e[:, None] * t) / prec + Z[c, :, :p] / np.sqrt(prec)) @ k.E.T
            resid = Ys - beta @ k.X.T
            if spatial:
                cB = resid @ k.B
                prec_d = tau_e[:, None] + tau_s[:, None] * k.zeta
                eta = (tau_e[:, None] * cB) / prec_d + Z[c, :, p:] / np.sqrt(prec_d)
                quad = np.sum(k.zeta * eta**2, axis=1)
                tau_s = Gs[c] / (1.0 / pr.b_s + 0.5 * quad)
                resid = resid - eta @ k.B.T
            tau_e = Ge[c] / (1.0 / pr.b_eps + 0.5 * np.sum(resid**2, axis=1))
            j = it + c - cfg.burn_in
            if j >= 0:
                b_out[:, j] = beta
                te_out[:, j] = tau_e
                if spatial:
                    ts_out[:, j] = tau_s
                if d_out is not None:
                    d_out[:, j] = eta @ k.U.T
        bad = ~(np.isfinite(tau_e) & (tau_e > 0) & np.all(np.isfinite(beta), axis=1))
        if spatial:
            bad |= ~(np.isfinite(tau_s) & (tau_s > 0))
        newly = bad & (failed < 0)
        failed[newly] = it + C
        if newly.any():
            # freeze broken chains at a harmless state so the batch continues
            tau_e[bad], beta[bad] = 1.0, 0.0
            if spatial:
                tau_s[bad], eta[bad] = 1.0, 0.0
        it += C

    outs = []
    for r in range(R):
        outs.append(ChainOutput(
            beta_samples=b_out[r], tau_s_samples=None if ts_out is None else ts_out[r],
            tau_eps_samples=te_out[r], seed=int(seeds[r]), burn_in=cfg.burn_in,
            delta_samples=None if d_out is None else d_out[r],
            failed_at=None if failed[r] < 0 else int(failed[r]),
        ))
    return outs


# ----------------------------------------------------------------- Poisson


def _poisson_loglik(y, lin):
    return np.sum(y * lin - np.exp(lin), axis=-1)


def proposal_fisher(spec: ModelSpec, Y) -> IwlsFit:
    """IWLS fit of the non-spatial model behind the beta proposal.

    For ICAR, whose design has no intercept because the effect carries
    the level, the fit includes an intercept and ``U`` is the Fisher
    information block of the remaining coefficients.
    """
    if spec.kind != "ICAR":
        return iwls_poisson(spec.X, Y, spec.offset)
    Xa = np.column_stack([np.ones(spec.n), spec.X])
    fit = iwls_poisson(Xa, Y, spec.offset)
    return replace(fit, beta_hat=fit.beta_hat[1:], U=fit.U[1:, 1:])


def mh_poisson(spec: ModelSpec, Y, cfg: ChainConfig, fit: IwlsFit | None = None) -> ChainOutput:
    """Run one Metropolis-within-Gibbs chain for a Poisson model.

    The beta proposal covariance is the inverse Fisher information of
    the non-spatial IWLS fit on the same design (computed if `fit` is
    not supplied).
    """
    Y = np.asarray(Y, dtype=float)
    fit = fit or proposal_fisher(spec, Y)
    out = mh_poisson_batch([spec], Y[None, :], cfg, [cfg.seed], [fit.covariance])[0]
    if out.failed_at is not None:
        raise NumericalFailure(f"MH chain degenerated at iteration {out.failed_at}", out.failed_at)
    return out


def _edge_penalty(edges, s, nu):
    g = s * nu
    d = g[..., edges[:, 0]] - g[..., edges[:, 1]]
    return np.sum(d * d, axis=-1)


def _poisson_start(spec: ModelSpec, y, off, inv_var, tau_s: float = 1.0, steps: int = 25):
    """Starting values for a Poisson chain.

    beta and delta start at the conditional posterior mode given
    ``tau_s`` (damped Newton steps). The joint mode over tau_s as well is
    not used: it collapses delta towards zero and sends tau_s to the
    boundary, which is a poor place to tune the delta step.
    """
    X = spec.X
    n, p, q = spec.n, spec.p, spec.q
    # least squares on log counts; under ICAR the level goes into delta's
    # unpenalized constant direction
    icar = spec.kind == "ICAR"
    Xs = np.column_stack([np.ones(n), X]) if icar else X
    sw = np.sqrt(y + 0.5)
    coef = np.linalg.lstsq(sw[:, None] * Xs, sw * (np.log(y + 0.5) - off), rcond=None)[0]
    beta0 = coef[1:] if icar else coef
    delta0 = np.full(q, coef[0]) if icar else np.zeros(q)
    if not q:
        return beta0, delta0, tau_s
    Z = np.column_stack([X, np.eye(n) if icar else spec.W])
    P = np.zeros((p + q, p + q))
    P[:p, :p] = inv_var * np.eye(p)
    P[p:, p:] = tau_s * spec.F
    theta = np.concatenate([beta0, delta0])
    for _ in range(steps):
        mu = np.exp(off + Z @ theta)
        grad = Z.T @ (y - mu) - P @ theta
        try:
            step = np.linalg.solve(Z.T @ (mu[:, None] * Z) + P, grad)
        except np.linalg.LinAlgError:
            break
        theta = theta + step / max(1.0, np.abs(step).max())
        if np.abs(step).max() < 1e-10:
            break
    if not np.all(np.isfinite(theta)):
        return beta0, delta0, tau_s
    return theta[:p], theta[p:], tau_s


def mh_poisson_batch(specs, Ys, cfg: ChainConfig, seeds, proposal_covs) -> list[ChainOutput]:
    """Run one Poisson chain per model/response pair.

    All specs must share the design, kind and basis size. Bases, penalties
    and offsets may differ per chain (as they do for the weighted count
    bases, which depend on each response through IWLS).

    Update order per sweep: beta (random walk, proposal covariance from
    `proposal_covs`), delta (spherical random walk), tau_s (Gibbs).
    """
    R = len(specs)
    Ys = np.atleast_2d(np.asarray(Ys, dtype=float))
    s0 = specs[0]
    if Ys.shape != (R, s0.n) or len(seeds) != R or len(proposal_covs) != R:
        raise InvalidParameter("specs, responses, seeds and proposals must align")
    for s in specs:
        if s.family != "poisson" or s.kind != s0.kind or s.q != s0.q or s.X.shape != s0.X.shape:
            raise InvalidParameter("batched Poisson specs must share family, kind and shapes")
    X = s0.X
    n, p, q = s0.n, s0.p, s0.q
    pr = s0.priors
    spatial = q > 0
    identity_basis = s0.kind == "ICAR"
    inv_var = 0.0 if pr.flat_beta else 1.0 / pr.beta_sd**2

    off = np.stack([np.zeros(n) if s.offset is None else s.offset for s in specs])
    chol = np.stack([np.linalg.cholesky(0.5 * (c + c.T)) for c in proposal_covs])
    if spatial:
        rank_F = s0.rank_F
        shape_s = pr.a_s + rank_F / 2.0
        Wst = None if identity_basis else np.stack([s.W for s in specs])
        use_edges = all(s.laplacian is not None and s.node_scale is not None for s in specs)
        if use_edges:
            Qm = s0.laplacian
            edges = np.column_stack(np.nonzero(np.triu(-Qm, 1) > 0))
            S = np.stack([s.node_scale for s in specs])
        else:
            Fst = np.stack([s.F for s in specs])

    def basis_mul(v):
        if identity_basis:
            return v
        return np.einsum("rnq,rq->rn", Wst, v)

    def penalty(delta, nu):
        if use_edges:
            return _edge_penalty(edges, S, nu)
        return np.einsum("rq,rqk,rk->r", delta, Fst, delta)

    gens = [chain_generator(s) for s in seeds]
    beta = np.zeros((R, p))
    delta = np.zeros((R, q))
    tau_s = np.ones(R)
    for r in range(R):
        beta[r], delta[r], tau_s[r] = _poisson_start(specs[r], Ys[r], off[r], inv_var)
    nu = basis_mul(delta) if spatial else np.zeros((R, n))
    lin = off + beta @ X.T
    ll = _poisson_loglik(Ys, lin)
    pen = penalty(delta, nu) if spatial else None
    log_step = np.full(R, np.log(cfg.delta_step))

    m = cfg.retained
    b_out = np.empty((R, m, p))
    ts_out = np.empty((R, m)) if spatial else None
    d_out = np.empty((R, m, q)) if (cfg.store_delta and spatial) else None
    acc_b = np.zeros(R)
    acc_d = np.zeros(R)
    failed = np.full(R, -1)

    it = 0
    while it < cfg.iterations:
        C = min(CHUNK, cfg.iterations - it)
        Zb = np.empty((C, R, p))
        Ub = np.empty((C, R))
        Zd = np.empty((C, R, q))
        Ud = np.empty((C, R))
        Gs = np.empty((C, R))
        for r, g in enumerate(gens):
            Zb[:, r] = g.standard_normal((C, p))
            Ub[:, r] = g.random(C)
            if spatial:
                Zd[:, r] = g.standard_normal((C, q))
                Ud[:, r] = g.random(C)
                Gs[:, r] = g.standard_gamma(shape_s, C)
        # refresh the linear predictor to stop rounding drift
        lin = off + beta @ X.T + nu
        ll = _poisson_loglik(Ys, lin)
        for c in range(C):
            t = it + c
            keep = t >= cfg.burn_in
            # beta block
            step = np.einsum("rij,rj->ri", chol, Zb[c])
            lin_new = lin + step @ X.T
            ll_new = _poisson_loglik(Ys, lin_new)
            bn = beta + step
            log_a = ll_new - ll
            if inv_var:
                log_a -= 0.5 * inv_var * (np.sum(bn**2, axis=1) - np.sum(beta**2, axis=1))
            ok = np.log(Ub[c]) < log_a
            beta = np.where(ok[:, None], bn, beta)
            lin = np.where(ok[:, None], lin_new, lin)
            ll = np.where(ok, ll_new, ll)
            if keep:
                acc_b += ok
            if spatial:
                sc = np.exp(log_step)
                dd = sc[:, None] * Zd[c]
                dnu = basis_mul(dd)
                nu_new = nu + dnu
                d_new = delta + dd
                lin_new = lin + dnu
                ll_new = _poisson_loglik(Ys, lin_new)
                pen_new = penalty(d_new, nu_new)
                log_a = ll_new - ll - 0.5 * tau_s * (pen_new - pen)
                ok = np.log(Ud[c]) < log_a
                delta = np.where(ok[:, None], d_new, delta)
                nu = np.where(ok[:, None], nu_new, nu)
                lin = np.where(ok[:, None], lin_new, lin)
                ll = np.where(ok, ll_new, ll)
                pen = np.where(ok, pen_new, pen)
                if keep:
                    acc_d += ok
                elif cfg.adapt_burn_in:
                    gain = min(0.5, 5.0 / (t + 1) ** 0.6)
                    log_step = log_step + gain * (ok - TARGET_ACCEPT)
                tau_s = Gs[c] / (1.0 / pr.b_s + 0.5 * pen)
            if keep:
                j = t - cfg.burn_in
                b_out[:, j] = beta
                if spatial:
                    ts_out[:, j] = tau_s
                if d_out is not None:
                    d_out[:, j] = delta
        bad = ~(np.isfinite(ll) & np.all(np.isfinite(beta), axis=1))
        if spatial:
            bad |= ~(np.isfinite(tau_s) & (tau_s > 0))
        newly = bad & (failed < 0)
        failed[newly] = it + C
        if newly.any():
            beta[bad], delta[bad], nu[bad], tau_s[bad] = 0.0, 0.0, 0.0, 1.0
            if spatial:
                pen = penalty(delta, nu)
        it += C

    outs = []
    for r in range(R):
        rates = {"beta": float(acc_b[r] / m)}
        if spatial:
            rates["delta"] = float(acc_d[r] / m)
        warn = [f"{blk} acceptance {a:.3f} outside [{ACCEPT_RANGE[0]}, {ACCEPT_RANGE[1]}]"
                for blk, a in rates.items() if not ACCEPT_RANGE[0] <= a <= ACCEPT_RANGE[1]]
        outs.append(ChainOutput(
            beta_samples=b_out[r], tau_s_samples=None if ts_out is None else ts_out[r],
            tau_eps_samples=None, seed=int(seeds[r]), burn_in=cfg.burn_in,
            delta_samples=None if d_out is None else d_out[r], acceptance_rates=rates,
            warnings=warn, failed_at=None if failed[r] < 0 else int(failed[r]),
            delta_step=float(np.exp(log_step[r])) if spatial else None,
        ))
    return outs


# ------------------------------------------------------------- diagnostics


def batch_means(x):
    """Batch-means Monte Carlo standard error along axis 0.

    Uses batch size ``b = floor(sqrt(m))`` and ``a = floor(m / b)``
    batches over the first ``a*b`` draws. Returns ``(mcse, ess)``; the
    effective sample size is ``m * var / sigma2_bm`` and is reported as
    ``m`` for a constant chain.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    if m < 100:
        raise InvalidParameter(f"batch means needs at least 100 draws, got {m}")
    b = int(np.floor(np.sqrt(m)))
    a = m // b
    xb = x[: a * b].reshape((a, b) + x.shape[1:]).mean(axis=1)
    sig2 = b * np.sum((xb - xb.mean(axis=0)) ** 2, axis=0) / (a - 1)
    mcse = np.sqrt(sig2 / (a * b))
    var = x.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(sig2 > 0, m * var / sig2, float(m))
    return mcse, ess


def run_chain_diagnostics(out: ChainOutput) -> dict:
    """MCSE and effective sample size for every sampled block.

    Returns a dict mapping ``"beta"``, ``"tau_eps"``, ``"tau_s"`` (when
    present) to ``(mcse, ess)`` tuples of arrays.
    """
    res = {"beta": batch_means(out.beta_samples)}
    if out.tau_eps_samples is not None:
        res["tau_eps"] = batch_means(out.tau_eps_samples)
    if out.tau_s_samples is not None:
        res["tau_s"] = batch_means(out.tau_s_samples)
    return res


def warn_acceptance(out: ChainOutput) -> None:
    for w in out.warnings:
        warnings.warn(w, RuntimeWarning, stacklevel=2)

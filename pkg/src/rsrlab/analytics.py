"""Posterior summaries and deterministic posterior oracles.

For a Gaussian model with a flat beta prior, beta and delta integrate out
in closed form. What remains is a two-dimensional integral over the
precisions, and further reduces to one dimension in the variance ratio
``r = tau_s / tau_eps``:

* with ``G(r) = [[X'X, X'W], [W'X, W'W + r F]]`` and ``h = [X'Y; W'Y]``,
  the conditional mean ``m(r) = G(r)^{-1} h`` and the residual
  ``S(r) = Y'Y - h' m(r)`` do not depend on ``tau_eps``;
* ``tau_eps | r, Y ~ Gamma(kappa, rate(r))`` with
  ``kappa = a_eps + a_s + (n - p - q + rank F)/2`` and
  ``rate(r) = 1/b_eps + r/b_s + S(r)/2``;
* the marginal density of r is proportional to
  ``r^(a_s + rank F/2 - 1) |G(r)|^(-1/2) rate(r)^(-kappa)``.

Moments of beta and ``sigma = 1/tau_eps`` are then one-dimensional
integrals on a log-r axis. A tensor-product route over
``(log tau_eps, log tau_s)`` is kept as an independent cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, optimize, special, stats

from .errors import InvalidParameter, MomentUndefined, NumericalFailure
from .model import ModelSpec, PriorConfig
from .samplers import ChainOutput, batch_means

QUANTILE_METHOD = "hazen"

# integrand cut-off relative to its peak, on the log scale (1e-16)
LOG_CUTOFF = np.log(1e-16)


# ---------------------------------------------------------------- summaries


@dataclass
class PosteriorSummary:
    """Per-coefficient posterior summary from MCMC draws.

    Interval endpoints are sample quantiles at ``alpha/2`` and
    ``1 - alpha/2`` under the midpoint (Hazen) rule, which places the
    k-th ordered draw at probability ``(k - 1/2)/m``.
    """

    names: tuple
    mean: np.ndarray
    variance: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mcse: np.ndarray
    alpha: float

    def rows(self):
        for k, nm in enumerate(self.names):
            yield nm, self.mean[k], self.variance[k], self.lower[k], self.upper[k], self.mcse[k]


def summarize(chain: ChainOutput, alpha: float = 0.05, names=None) -> PosteriorSummary:
    """Mean, variance, equal-tailed interval and batch-means MCSE of beta."""
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0, 1)")
    B = chain.beta_samples
    if B.shape[0] < 100:
        raise InvalidParameter("summaries need at least 100 retained draws")
    lo, med, hi = np.quantile(B, [alpha / 2, 0.5, 1 - alpha / 2], axis=0, method=QUANTILE_METHOD)
    mcse, _ = batch_means(B)
    names = tuple(names) if names is not None else tuple(f"beta{k}" for k in range(B.shape[1]))
    return PosteriorSummary(names, B.mean(axis=0), B.var(axis=0, ddof=1), med, lo, hi, mcse, alpha)


def summarize_many(samples: np.ndarray, alpha: float = 0.05):
    """Vectorized ``(mean, lower, upper)`` for draws of shape (R, m, p)."""
    lo, hi = np.quantile(samples, [alpha / 2, 1 - alpha / 2], axis=1, method=QUANTILE_METHOD)
    return samples.mean(axis=1), lo, hi


# ------------------------------------------------------------- closed forms


def _resid_ss(X, Y):
    beta, *_ = np.linalg.lstsq(X, Y, rcond=None)
    r = Y - X @ beta
    return float(r @ r)


def ns_posterior_sigma_mean(X, Y, priors: PriorConfig) -> float:
    """``E(sigma | Y)`` under the non-spatial model, ``sigma = 1/tau_eps``.

    Equals ``(1/b_eps + |P_perp Y|^2 / 2) / ((a_eps - 1) + (n - p)/2)``.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, p = X.shape
    den = (priors.a_eps - 1.0) + 0.5 * (n - p)
    if den <= 0:
        raise MomentUndefined(f"posterior mean of sigma needs (a_eps - 1) + (n - p)/2 > 0, got {den}")
    return (1.0 / priors.b_eps + 0.5 * _resid_ss(X, Y)) / den


def conditional_sigma_mean(spec: ModelSpec, Y, r: float) -> float:
    """``E(sigma | Y, r)`` when the variance ratio r is held fixed.

    With r fixed, delta has prior precision ``r tau_eps F`` and
    ``tau_eps | Y, r`` is Gamma with shape ``a_eps + (n - p - q + rank F)/2``
    and rate ``1/b_eps + Y' Sigma_r Y / 2`` where
    ``Sigma_r = P_perp - W (W'W + r F)^{-1} W'``. For an orthonormal W
    spanning all of C(X)-perp this is
    ``(1/b_eps + .5 Y'W(I - (I + rF)^{-1})W'Y) / (a_eps + .5(n - p) - 1)``.
    Any part of P_perp Y outside C(W) is added to the residual term.
    """
    if r < 0:
        raise InvalidParameter("r must be non-negative")
    Y = np.asarray(Y, dtype=float)
    X, W, F = spec.X, spec.W, spec.F
    n, p, q = spec.n, spec.p, spec.q
    pr = spec.priors
    res = _resid_ss(X, Y)
    if q:
        WtY = W.T @ Y
        res -= float(WtY @ np.linalg.solve(W.T @ W + r * F, WtY))
    den = pr.a_eps + 0.5 * (n - p - q + spec.rank_F) - 1.0
    if den <= 0:
        raise MomentUndefined("conditional posterior mean of sigma is undefined")
    return (1.0 / pr.b_eps + 0.5 * max(res, 0.0)) / den


@dataclass(frozen=True)
class ClosedFormNS:
    """Constants of the single-covariate non-spatial beta posterior.

    ``h(beta | Y) = [ |Y - X beta|^2 / 2 + 1/b_eps ]^(-d) / D_h`` with
    ``b = X'Y / X'X``, ``c = (2/X'X)(Y'Y/2 - (X'Y)^2/(2 X'X) + 1/b_eps)``,
    ``d = a_eps + n/2`` and
    ``D_h = (X'X/2)^(-d) sqrt(pi) Gamma(d - 1/2) / Gamma(d) c^(1/2 - d)``.
    The density is a Student t with ``2d - 1`` degrees of freedom,
    location b and squared scale ``c / (2d - 1)``.
    """

    xtx: float
    xty: float
    yty: float
    b_eps: float
    b: float
    c: float
    d: float
    log_D_h: float

    def log_kernel(self, beta):
        beta = np.asarray(beta, dtype=float)
        ss = self.yty - 2 * beta * self.xty + beta**2 * self.xtx
        return -self.d * np.log(0.5 * ss + 1.0 / self.b_eps)

    def pdf(self, beta):
        return np.exp(self.log_kernel(beta) - self.log_D_h)

    @property
    def dist(self):
        nu = 2 * self.d - 1
        return stats.t(df=nu, loc=self.b, scale=np.sqrt(self.c / nu))

    def cdf(self, beta):
        """CDF by adaptive quadrature of the density (vectorized over beta)."""
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        out = np.empty_like(beta)
        for k, x in enumerate(beta):
            if x <= self.b:
                v, _ = integrate.quad(self.pdf, -np.inf, x, epsabs=0, epsrel=1e-12, limit=200)
                out[k] = v
            else:
                v, _ = integrate.quad(self.pdf, x, np.inf, epsabs=0, epsrel=1e-12, limit=200)
                out[k] = 1.0 - v
        return out


def closed_form_ns(X, Y, priors: PriorConfig) -> ClosedFormNS:
    """Build :class:`ClosedFormNS` for a single-column design."""
    X = np.asarray(getattr(X, "X", X), dtype=float).reshape(len(Y), -1)
    if X.shape[1] != 1:
        raise InvalidParameter("the closed form applies to a single covariate")
    x = X[:, 0]
    Y = np.asarray(Y, dtype=float)
    n = len(Y)
    xtx, xty, yty = float(x @ x), float(x @ Y), float(Y @ Y)
    c = (2.0 / xtx) * (yty / 2 - xty**2 / (2 * xtx) + 1.0 / priors.b_eps)
    d = priors.a_eps + n / 2
    if not (c > 0 and d > 0.5):
        raise MomentUndefined("closed-form density requires c > 0 and d > 1/2")
    log_D_h = (-d * np.log(xtx / 2) + 0.5 * np.log(np.pi) + special.gammaln(d - 0.5)
               - special.gammaln(d) + (0.5 - d) * np.log(c))
    return ClosedFormNS(xtx, xty, yty, priors.b_eps, xty / xtx, c, d, log_D_h)


# ------------------------------------------------------ ratio-profile model


class RatioProfile:
    """Everything needed to integrate over ``u = log r`` for one spec and Y."""

    def __init__(self, spec: ModelSpec, Y):
        if spec.family != "gaussian":
            raise InvalidParameter("quadrature oracles apply to Gaussian models")
        if not spec.priors.flat_beta:
            raise InvalidParameter("quadrature oracles assume a flat beta prior")
        self.spec = spec
        Y = np.asarray(Y, dtype=float)
        X, W, F = spec.X, spec.W, spec.F
        self.n, self.p, self.q = spec.n, spec.p, spec.q
        pr = spec.priors
        self.pr = pr
        if self.q:
            G = W.T @ W
            zeta, U = linalg.eigh(0.5 * (F + F.T), 0.5 * (G + G.T))
            tol = 1e-12 * max(1.0, np.abs(zeta).max())
            self.zeta = np.where(np.abs(zeta) <= tol, 0.0, np.maximum(zeta, 0.0))
            B = W @ U
            # log |G(r)| = log|W'W| + sum log(1 + r zeta) + log|Schur|
            self.logdet_WtW = float(np.linalg.slogdet(G)[1])
        else:
            self.zeta = np.zeros(0)
            B = np.zeros((self.n, 0))
            self.logdet_WtW = 0.0
        self.rk = spec.rank_F
        self.XtX = X.T @ X
        self.XtB = X.T @ B
        self.BtY = B.T @ Y
        self.XtY = X.T @ Y
        self.YtY = float(Y @ Y)
        self.kappa = pr.a_eps + pr.a_s + 0.5 * (self.n - self.p - self.q + self.rk)
        if self.kappa <= 1:
            raise MomentUndefined("posterior mean of sigma is undefined (kappa <= 1)")

    def parts(self, u):
        r = np.exp(u)
        D = 1.0 + r * self.zeta
        S = self.XtX - (self.XtB / D) @ self.XtB.T
        h = self.XtY - self.XtB @ (self.BtY / D)
        # p is small; plain numpy avoids scipy's per-call input checks
        Sinv = np.linalg.inv(S)
        m = Sinv @ h
        res = self.YtY - float(self.BtY @ (self.BtY / D)) - float(h @ m)
        rate = 1.0 / self.pr.b_eps + r / self.pr.b_s + 0.5 * max(res, 0.0)
        logdet = np.sum(np.log(D)) + np.linalg.slogdet(S)[1]
        logf = (self.pr.a_s + 0.5 * self.rk) * u - 0.5 * logdet - self.kappa * np.log(rate)
        return logf, m, Sinv, rate

    def parts_many(self, us):
        """Vectorized :meth:`parts` returning a dict of stacked arrays."""
        us = np.asarray(us, dtype=float)
        r = np.exp(us)
        D = 1.0 + r[:, None] * self.zeta[None, :]
        S = self.XtX[None] - np.einsum("iq,nq,jq->nij", self.XtB, 1.0 / D, self.XtB)
        h = self.XtY[None] - (self.BtY[None, :] / D) @ self.XtB.T
        Sinv = np.linalg.inv(S)
        m = np.einsum("nij,nj->ni", Sinv, h)
        res = self.YtY - np.sum(self.BtY[None, :] ** 2 / D, axis=1) - np.sum(h * m, axis=1)
        rate = 1.0 / self.pr.b_eps + r / self.pr.b_s + 0.5 * np.maximum(res, 0.0)
        logdet = np.sum(np.log(D), axis=1) + np.linalg.slogdet(S)[1]
        logf = (self.pr.a_s + 0.5 * self.rk) * us - 0.5 * logdet - self.kappa * np.log(rate)
        return {"logf": logf, "m": m, "Sinv_diag": np.diagonal(Sinv, axis1=1, axis2=2), "rate": rate,
                "logdet": logdet}

    def bounds(self):
        """Interval on the u axis holding all mass above the cut-off."""
        us = np.linspace(-80.0, 80.0, 641)
        lf = self.parts_many(us)["logf"]
        k = int(np.argmax(lf))
        peak = lf[k]
        # refine the peak on a fine local grid
        fine = np.linspace(us[max(k - 1, 0)], us[min(k + 1, len(us) - 1)], 41)
        lff = self.parts_many(fine)["logf"]
        j = int(np.argmax(lff))
        if lff[j] > peak:
            peak, u_peak = lff[j], fine[j]
        else:
            u_peak = us[k]
        above = np.flatnonzero(lf >= peak + LOG_CUTOFF - 2.0)
        lo = us[max(above[0] - 1, 0)]
        hi = us[min(above[-1] + 1, len(us) - 1)]
        if above[0] == 0 or above[-1] == len(us) - 1:
            # mass reaches the scan edge; the tail decays polynomially in r
            lo, hi = min(lo, -200.0), max(hi, 200.0)
        return lo, hi, u_peak, peak


@dataclass
class QuadratureMoments:
    """Posterior moments from the quadrature oracle."""

    mean: np.ndarray
    variance: np.ndarray
    sigma_mean: float
    log_evidence: float
    method: str


def _scaled_quad_vec(f, lo, hi, points, grid, epsrel):
    """Integrate a vector function with per-component scaling."""
    vals = np.array([f(u) for u in grid])
    scale = np.maximum(np.abs(vals).max(axis=0), 1e-300)
    res, err = integrate.quad_vec(lambda u: f(u) / scale, lo, hi, epsabs=0.0, epsrel=epsrel,
                                  points=points, limit=2000)
    if not np.all(np.isfinite(res)):
        raise NumericalFailure("quadrature produced non-finite values")
    return res * scale


def quadrature_moments(spec: ModelSpec, Y, method: str = "profile", epsrel: float = 1e-11) -> QuadratureMoments:
    """Posterior mean and variance of beta and mean of sigma by quadrature.

    Parameters
    ----------
    spec : ModelSpec
        Gaussian model with flat beta prior.
    Y : array_like
    method : {"profile", "tensor"}
        ``"profile"`` integrates tau_eps analytically and r numerically;
        ``"tensor"`` integrates over ``(log tau_eps, log tau_s)``.
    """
    if spec.family != "gaussian" or not spec.priors.flat_beta:
        raise InvalidParameter("quadrature oracles need a Gaussian model with a flat beta prior")
    if method == "tensor":
        return _tensor_moments(spec, Y, epsrel=max(epsrel, 1e-10))
    if method != "profile":
        raise InvalidParameter("method must be 'profile' or 'tensor'")
    Y = np.asarray(Y, dtype=float)
    if spec.q == 0:
        return _ns_moments(spec, Y)
    prof = RatioProfile(spec, Y)
    lo, hi, u_pk, peak = prof.bounds()
    p = prof.p
    _, m0, _, _ = prof.parts(u_pk)
    k1 = prof.kappa - 1.0

    def f(u):
        lf, m, Sinv, rate = prof.parts(u)
        w = np.exp(lf - peak)
        dm = m - m0
        s = rate / k1
        return np.concatenate([[w], w * dm, w * (s * np.diag(Sinv) + dm * dm), [w * s]])

    grid = np.linspace(lo, hi, 81)
    v = _scaled_quad_vec(f, lo, hi, [u_pk], grid, epsrel)
    Z = v[0]
    Edm = v[1:1 + p] / Z
    mean = m0 + Edm
    var = v[1 + p:1 + 2 * p] / Z - Edm**2
    log_ev = np.log(Z) + peak
    return QuadratureMoments(mean, var, float(v[-1] / Z), float(log_ev), "profile")


def _ns_moments(spec: ModelSpec, Y):
    X = spec.X
    beta = np.linalg.solve(X.T @ X, X.T @ Y)
    s = ns_posterior_sigma_mean(X, Y, spec.priors)
    var = np.diag(np.linalg.inv(X.T @ X)) * s
    return QuadratureMoments(beta, var, s, float("nan"), "closed")


def _tensor_moments(spec: ModelSpec, Y, epsrel=1e-10):
    """Tensor-product trapezoid rule over ``(log tau_eps, log tau_s)``.

    Both axes share one step h, so ``log r = log tau_s - log tau_eps``
    only visits lattice points and the matrix work is done once per
    distinct r. The step is halved until every integrated component
    changes by less than `epsrel` relative to its magnitude; for these
    smooth, rapidly decaying integrands on log axes the trapezoid rule
    converges geometrically.
    """
    Y = np.asarray(Y, dtype=float)
    if spec.q == 0:
        return _ns_moments(spec, Y)
    prof = RatioProfile(spec, Y)
    pr = prof.pr
    n, p, q, rk = prof.n, prof.p, prof.q, prof.rk
    a_e = pr.a_eps + 0.5 * (n - p - q)
    a_s = pr.a_s + 0.5 * rk
    lo_r, hi_r, u_pk, _ = prof.bounds()
    _, m0, _, rate_pk = prof.parts(u_pk)
    ue_c = float(np.log(prof.kappa / rate_pk))

    def evaluate(h, ue_lo, ue_hi, w_lo, w_hi):
        ue = np.arange(np.floor(ue_lo / h), np.ceil(ue_hi / h) + 1) * h
        w = np.arange(np.floor(w_lo / h), np.ceil(w_hi / h) + 1) * h
        P = prof.parts_many(w)
        # residual S(r) recovered from the rate, plus log|G| per r
        S_res = 2.0 * (P["rate"] - 1.0 / pr.b_eps - np.exp(w) / pr.b_s)
        te = np.exp(ue)[:, None]
        ts = te * np.exp(w)[None, :]
        logf = (a_e * np.log(te) + a_s * np.log(ts) - 0.5 * P["logdet"][None, :]
                - te / pr.b_eps - ts / pr.b_s - 0.5 * te * S_res[None, :])
        return ue, w, logf, P

    # coarse pass to find the box holding the mass
    ue, w, logf, P = evaluate(0.5, ue_c - 60, ue_c + 60, lo_r, hi_r)
    peak = logf.max()
    iu, iw = np.nonzero(logf >= peak + LOG_CUTOFF - 2.0)
    box = (ue[iu.min()] - 1, ue[iu.max()] + 1, w[iw.min()] - 1, w[iw.max()] + 1)

    prev = None
    h = 0.25
    while True:
        ue, w, logf, P = evaluate(h, *box)
        wt = np.exp(logf - peak)
        inv_te = np.exp(-ue)[:, None]
        dm = P["m"] - m0
        Z = wt.sum()
        col = wt.sum(axis=0)
        s_inv = (wt * inv_te).sum(axis=0)
        v = np.concatenate([[Z], col @ dm, s_inv @ P["Sinv_diag"] + col @ (dm * dm), [(wt * inv_te).sum()]]) * h * h
        if prev is not None:
            change = np.abs(v - prev) / np.maximum(np.abs(v), 1e-300)
            if change.max() <= epsrel or h <= 1.0 / 256:
                break
        prev = v
        h /= 2
    Z = v[0]
    Edm = v[1:1 + p] / Z
    return QuadratureMoments(m0 + Edm, v[1 + p:1 + 2 * p] / Z - Edm**2, float(v[-1] / Z), float("nan"), "tensor")


def beta_marginal_density(spec: ModelSpec, Y, index: int, grid, epsrel: float = 1e-11) -> np.ndarray:
    """Marginal posterior density of ``beta[index]`` on `grid`.

    Conditional on r, beta is Student t with ``2 kappa`` degrees of
    freedom, location ``m(r)`` and squared scale ``S(r)^{-1} rate(r)/kappa``;
    the marginal mixes these over the posterior of r.
    """
    Y = np.asarray(Y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if spec.q == 0:
        X = spec.X
        n, p = X.shape
        k = spec.priors.a_eps + 0.5 * (n - p)
        rate = 1.0 / spec.priors.b_eps + 0.5 * _resid_ss(X, Y)
        Sinv = np.linalg.inv(X.T @ X)
        m = Sinv @ X.T @ Y
        return stats.t.pdf(grid, df=2 * k, loc=m[index], scale=np.sqrt(Sinv[index, index] * rate / k))
    prof = RatioProfile(spec, Y)
    lo, hi, u_pk, peak = prof.bounds()
    k = prof.kappa
    df = 2 * k
    lnorm = special.gammaln(0.5 * (df + 1)) - special.gammaln(0.5 * df) - 0.5 * np.log(df * np.pi)

    def f(u):
        lf, m, Sinv, rate = prof.parts(u)
        w = np.exp(lf - peak)
        sc = np.sqrt(Sinv[index, index] * rate / k)
        z = (grid - m[index]) / sc
        pdf = np.exp(lnorm - 0.5 * (df + 1) * np.log1p(z * z / df)) / sc
        return np.concatenate([[w], w * pdf])

    v = _scaled_quad_vec(f, lo, hi, [u_pk], np.linspace(lo, hi, 81), epsrel)
    return v[1:] / v[0]


def beta_marginal_tails(spec: ModelSpec, Y, index: int, points, epsrel: float = 1e-11):
    """``(P(beta <= x), P(beta > x))`` for each x in `points`."""
    Y = np.asarray(Y, dtype=float)
    points = np.asarray(points, dtype=float)
    prof = RatioProfile(spec, Y)
    lo, hi, u_pk, peak = prof.bounds()
    k = prof.kappa

    def f(u):
        lf, m, Sinv, rate = prof.parts(u)
        w = np.exp(lf - peak)
        sc = np.sqrt(Sinv[index, index] * rate / k)
        z = (points - m[index]) / sc
        return np.concatenate([[w], w * stats.t.cdf(z, df=2 * k), w * stats.t.sf(z, df=2 * k)])

    v = _scaled_quad_vec(f, lo, hi, [u_pk], np.linspace(lo, hi, 81), epsrel)
    npts = len(points)
    return v[1:1 + npts] / v[0], v[1 + npts:] / v[0]


# ---------------------------------------------------------- tail constants


def log_C_q(spec: ModelSpec) -> float:
    """``log inf_r |W'W + r F| / (1 + r^q)``; ``-inf`` when F is singular."""
    q = spec.q
    G = spec.W.T @ spec.W
    zeta, U = linalg.eigh(spec.F, G)
    omega = np.ones(q)  # U' G U = I, so |W'W + rF| = |W'W| prod(1 + r zeta)
    base = float(np.linalg.slogdet(G)[1])
    if np.any(zeta <= 1e-12 * max(1.0, np.abs(zeta).max())):
        return -np.inf

    def g(u):
        r = np.exp(u)
        return base + np.sum(np.log(omega + r * zeta)) - np.logaddexp(0.0, q * u)

    us = np.linspace(-60, 60, 2401)
    vals = np.array([g(u) for u in us])
    k = int(np.argmin(vals))
    best = vals[k]
    if 0 < k < len(us) - 1:
        res = optimize.minimize_scalar(g, bounds=(us[k - 1], us[k + 1]), method="bounded",
                                       options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    # the limits r -> 0 and r -> inf are |W'W| and |W'W| prod(zeta)
    return float(min(best, base, base + np.sum(np.log(zeta))))


def log_D_g_star(spec: ModelSpec, Y) -> float:
    """Log normalizing constant of the restricted model's beta posterior.

    Integrates the likelihood times the delta, tau_eps and tau_s priors
    (the delta prior normalized without its determinant factor) over all
    parameters, for a single-covariate design.
    """
    if spec.p != 1:
        raise InvalidParameter("the tail constants are defined for one covariate")
    Y = np.asarray(Y, dtype=float)
    pr = spec.priors
    n, q = spec.n, spec.q
    X = spec.X
    xtx = float(X[:, 0] @ X[:, 0])
    G = spec.W.T @ spec.W
    zeta, U = linalg.eigh(spec.F, G)
    B = spec.W @ U
    BtY = B.T @ Y
    pres = _resid_ss(X, Y)
    logdetG = float(np.linalg.slogdet(G)[1])
    kap = 0.5 * (n - 1) + pr.a_eps + pr.a_s

    def logf(u):
        r = np.exp(u)
        D = 1.0 + r * zeta
        quad = pres - float(BtY @ (BtY / D))
        rate = 1.0 / pr.b_eps + r / pr.b_s + 0.5 * max(quad, 0.0)
        return (0.5 * q + pr.a_s) * u - 0.5 * (logdetG + np.sum(np.log(D))) - kap * np.log(rate)

    us = np.linspace(-80, 80, 641)
    lf = np.array([logf(u) for u in us])
    peak = lf.max()
    above = np.flatnonzero(lf >= peak + LOG_CUTOFF - 2.0)
    lo, hi = us[max(above[0] - 1, 0)], us[min(above[-1] + 1, len(us) - 1)]
    val, _ = integrate.quad(lambda u: np.exp(logf(u) - peak), lo, hi, epsabs=0, epsrel=1e-12, limit=500,
                            points=[us[np.argmax(lf)]])
    const = (-0.5 * (n - 1) * np.log(2 * np.pi) - 0.5 * np.log(xtx) - special.gammaln(pr.a_eps)
             - pr.a_eps * np.log(pr.b_eps) - special.gammaln(pr.a_s) - pr.a_s * np.log(pr.b_s)
             + special.gammaln(kap))
    return float(const + peak + np.log(val))


def log_K(spec: ModelSpec, Y, log_cq: float | None = None) -> float:
    """``log K = log[(2 pi)^(-n/2) Gamma(n/2 + a) / (Gamma(a) b^a) D_h / sqrt(C_q)]``."""
    pr = spec.priors
    n = spec.n
    cf = closed_form_ns(spec.X, Y, pr)
    lcq = log_C_q(spec) if log_cq is None else log_cq
    return float(-0.5 * n * np.log(2 * np.pi) + special.gammaln(n / 2 + pr.a_eps) - special.gammaln(pr.a_eps)
                 - pr.a_eps * np.log(pr.b_eps) + cf.log_D_h - 0.5 * lcq)

"""Poisson log-link IWLS fit of the non-spatial model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, IwlsDiverged

MAX_ITER = 50
TOL = 1e-10
BLOWUP = 1e3
COLLAPSE = 1e-10


@dataclass(frozen=True, eq=False)
class IwlsFit:
    """Result of :func:`iwls_poisson`.

    Attributes
    ----------
    beta_hat : ndarray, shape (p,)
    U : ndarray, shape (p, p)
        Fisher information ``X' W X`` at the fitted means.
    h_diag : ndarray, shape (n,)
        Conditional variances ``Var(y_i)`` at the fit, equal to the means.
    w_diag : ndarray, shape (n,)
        Final working weights; for the canonical log link also the means.
    converged : bool
    iterations : int
    deviance : float
    """

    beta_hat: np.ndarray
    U: np.ndarray
    h_diag: np.ndarray
    w_diag: np.ndarray
    converged: bool
    iterations: int
    deviance: float

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.U)


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def iwls_poisson(X, y, offset=None, max_iter: int = MAX_ITER, tol: float = TOL) -> IwlsFit:
    """Maximum likelihood for ``y ~ Poisson(exp(offset + X beta))``.

    Parameters
    ----------
    X : array_like, shape (n, p)
        Design matrix (a :class:`DesignMatrix` is accepted too).
    y : array_like of non-negative integers
    offset : array_like, optional
        Log expected counts; zero when omitted.

    Raises
    ------
    IwlsDiverged
        When the relative deviance change stays above `tol` after
        `max_iter` iterations, when ``|beta| > 1e3`` at any iteration, or
        when the deviance settles with some fitted mean below ``1e-10``.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise InvalidParameter(f"response has shape {y.shape}, expected ({n},)")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise InvalidParameter("Poisson responses must be non-negative integers")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    # start from the saturated-ish working response
    mu = y + 0.5
    eta = np.log(mu)
    dev_old = np.inf
    beta = np.zeros(p)
    for it in range(1, max_iter + 1):
        z = eta - off + (y - mu) / mu
        sw = np.sqrt(mu)
        beta, *_ = np.linalg.lstsq(sw[:, None] * X, sw * z, rcond=None)
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > BLOWUP:
            raise IwlsDiverged(f"IWLS coefficients blew up at iteration {it} (|beta| > {BLOWUP:g})")
        eta = off + X @ beta
        mu = np.exp(eta)
        dev = poisson_deviance(y, mu)
        if abs(dev - dev_old) <= tol * (abs(dev) + tol):
            if mu.min() < COLLAPSE:
                # the deviance settles while some coefficient drifts to -inf
                raise IwlsDiverged(f"fitted means collapsed to zero by iteration {it} (separation in the design)")
            U = X.T @ (mu[:, None] * X)
            return IwlsFit(beta, 0.5 * (U + U.T), mu.copy(), mu.copy(), True, it, dev)
        dev_old = dev
    raise IwlsDiverged(f"IWLS did not converge in {max_iter} iterations")

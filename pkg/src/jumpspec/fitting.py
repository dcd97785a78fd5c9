"""Damped Gauss--Newton (Levenberg--Marquardt) least squares with
analytic Jacobians, plus the line-shape models used by the analysis
pipelines.

The optimizer accepts steps only when the cost decreases, so the cost
history is monotone by construction; convergence requires the gradient
norm to drop below a scaled tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class FitError(RuntimeError):
    """Optimizer failed to converge within the iteration budget."""


@dataclass(frozen=True)
class FitResult:
    x: np.ndarray
    covariance: np.ndarray
    cost: float
    cost_history: np.ndarray     # accepted-step costs, monotone decreasing
    grad_norm: float
    n_iter: int
    converged: bool

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def levenberg_marquardt(residual_jac, x0, *, max_iter: int = 200,
                        lam0: float = 1e-3, gtol: float = 1e-10,
                        xtol: float = 1e-12, raise_on_failure: bool = False):
    """Minimize 0.5*||r(x)||^2 given residual_jac(x) -> (r, J).

    ``gtol`` is relative: convergence when ||J^T r|| < gtol * max(1, cost).
    """
    x = np.asarray(x0, dtype=float).copy()
    lam = lam0
    r, jac = residual_jac(x)
    cost = 0.5 * float(r @ r)
    history = [cost]
    grad = jac.T @ r
    n_iter = 0
    converged = bool(np.linalg.norm(grad) < gtol * max(1.0, cost))
    while n_iter < max_iter and not converged:
        n_iter += 1
        jtj = jac.T @ jac
        diag = np.diag(np.clip(np.diag(jtj), 1e-300, None))
        try:
            step = np.linalg.solve(jtj + lam * diag, -grad)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        x_new = x + step
        r_new, jac_new = residual_jac(x_new)
        cost_new = 0.5 * float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new < cost:
            rel_move = np.linalg.norm(step) / max(np.linalg.norm(x), 1e-300)
            x, r, jac, cost = x_new, r_new, jac_new, cost_new
            grad = jac.T @ r
            history.append(cost)
            lam = max(lam / 3.0, 1e-14)
            if np.linalg.norm(grad) < gtol * max(1.0, cost) or rel_move < xtol:
                converged = True
        else:
            lam *= 10.0
            if lam > 1e14:
                break
    covariance = _covariance(jac, r)
    result = FitResult(x=x, covariance=covariance, cost=cost,
                       cost_history=np.array(history),
                       grad_norm=float(np.linalg.norm(jac.T @ r)),
                       n_iter=n_iter, converged=converged)
    if raise_on_failure and not converged:
        raise FitError(f"no convergence after {n_iter} iterations "
                       f"(grad norm {result.grad_norm:.3e})")
    return result


def _covariance(jac, r):
    m, n = jac.shape
    dof = max(m - n, 1)
    sigma2 = float(r @ r) / dof
    jtj = jac.T @ jac
    try:
        return sigma2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return np.full((n, n), np.nan)


def curve_fit(model_jac, x, y, p0, **kwargs) -> FitResult:
    """Fit y ~ model(x; p) with model_jac(x, p) -> (values, jacobian)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def residual(p):
        val, jac = model_jac(x, p)
        return val - y, jac

    return levenberg_marquardt(residual, p0, **kwargs)


# ---------------------------------------------------------------------------
# model library: each returns (values, d(values)/d(params))

def lorentzian(x, p):
    """p = (center, fwhm, amplitude, offset); amplitude is the peak height."""
    center, fwhm, amp, off = p
    u = 2.0 * (x - center) / fwhm
    denom = 1.0 + u * u
    val = off + amp / denom
    d_denom = -amp / denom ** 2
    jac = np.empty((x.size, 4))
    jac[:, 0] = d_denom * (-4.0 * u / fwhm)
    jac[:, 1] = d_denom * (-2.0 * u * u / fwhm)
    jac[:, 2] = 1.0 / denom
    jac[:, 3] = 1.0
    return val, jac


def multi_lorentzian(x, p):
    """p = (c1, w1, a1, ..., cn, wn, an, offset): shared additive offset."""
    n = (len(p) - 1) // 3
    off = p[-1]
    val = np.full(x.size, off)
    jac = np.zeros((x.size, len(p)))
    jac[:, -1] = 1.0
    for k in range(n):
        center, fwhm, amp = p[3 * k:3 * k + 3]
        u = 2.0 * (x - center) / fwhm
        denom = 1.0 + u * u
        val += amp / denom
        d_denom = -amp / denom ** 2
        jac[:, 3 * k] = d_denom * (-4.0 * u / fwhm)
        jac[:, 3 * k + 1] = d_denom * (-2.0 * u * u / fwhm)
        jac[:, 3 * k + 2] = 1.0 / denom
    return val, jac


def gaussian(x, p):
    """p = (center, sigma, amplitude, offset)."""
    center, sigma, amp, off = p
    u = (x - center) / sigma
    e = np.exp(-0.5 * u * u)
    val = off + amp * e
    jac = np.empty((x.size, 4))
    jac[:, 0] = amp * e * u / sigma
    jac[:, 1] = amp * e * u * u / sigma
    jac[:, 2] = e
    jac[:, 3] = 1.0
    return val, jac


def double_gaussian(x, p):
    """p = (c1, s1, a1, c2, s2, a2): sum of two Gaussians, no offset."""
    val = np.zeros(x.size)
    jac = np.zeros((x.size, 6))
    for k in range(2):
        center, sigma, amp = p[3 * k:3 * k + 3]
        u = (x - center) / sigma
        e = np.exp(-0.5 * u * u)
        val += amp * e
        jac[:, 3 * k] = amp * e * u / sigma
        jac[:, 3 * k + 1] = amp * e * u * u / sigma
        jac[:, 3 * k + 2] = e
    return val, jac


def exponential_decay(x, p):
    """p = (amplitude, tau, offset): offset + amplitude*exp(-x/tau)."""
    amp, tau, off = p
    e = np.exp(-x / tau)
    val = off + amp * e
    jac = np.empty((x.size, 3))
    jac[:, 0] = e
    jac[:, 1] = amp * e * x / tau ** 2
    jac[:, 2] = 1.0
    return val, jac


def damped_cosine(x, p):
    """p = (amplitude, frequency Hz, phase, tau, offset)."""
    amp, freq, phase, tau, off = p
    w = 2.0 * math.pi * freq
    e = np.exp(-x / tau)
    c = np.cos(w * x + phase)
    s = np.sin(w * x + phase)
    val = off + amp * e * c
    jac = np.empty((x.size, 5))
    jac[:, 0] = e * c
    jac[:, 1] = -amp * e * s * 2.0 * math.pi * x
    jac[:, 2] = -amp * e * s
    jac[:, 3] = amp * e * c * x / tau ** 2
    jac[:, 4] = 1.0
    return val, jac


def finite_difference(model, n_params, h: float = 1e-7):
    """Wrap a plain model(x, p) -> values into a (values, jacobian) pair."""

    def model_jac(x, p):
        p = np.asarray(p, dtype=float)
        val = model(x, p)
        jac = np.empty((np.size(val), n_params))
        for k in range(n_params):
            dp = h * max(abs(p[k]), 1.0)
            p_hi = p.copy()
            p_hi[k] += dp
            jac[:, k] = (model(x, p_hi) - val) / dp
        return val, jac

    return model_jac

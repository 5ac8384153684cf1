"""Weighted exponential-decay fits: log-linear start, damped Gauss-Newton refinement.

Four models share one solver:

* ``P_with_offset``      y = A r^m + B
* ``Pbar_Eq12``          y = A r^m + B   (purity decay, offset free to float)
* ``a_hat_fixed_half``   y = A r^m + 1/2
* ``b_hat_zero_offset``  y = A r^m

``fit_decay`` handles one data set; ``fit_decay_batch`` fits many data sets on
the same lengths at once (bootstrap resamples).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

P_WITH_OFFSET = "P_with_offset"
PBAR_EQ12 = "Pbar_Eq12"
A_HAT = "a_hat_fixed_half"
B_HAT = "b_hat_zero_offset"

MODELS = {
    # tag: (free offset?, fixed offset)
    P_WITH_OFFSET: (True, 0.5),
    PBAR_EQ12: (True, 0.0),
    A_HAT: (False, 0.5),
    B_HAT: (False, 0.0),
}

RATE_TOL = 1e-6
REL_TOL = 1e-10
MAX_ITER = 200


@dataclass
class DecayFit:
    model: str
    ok: bool
    amplitude: float = np.nan
    rate: float = np.nan
    offset: Optional[float] = None
    amplitude_se: float = np.nan
    rate_se: float = np.nan
    offset_se: Optional[float] = None
    residual_sum: float = np.nan
    iterations: int = 0
    message: str = ""
    covariance: np.ndarray = field(default=None, repr=False)

    def predict(self, m):
        m = np.asarray(m, dtype=float)
        base = self.offset if self.offset is not None else MODELS[self.model][1]
        return self.amplitude * self.rate**m + base


def _failure(model: str, message: str, iterations: int = 0) -> DecayFit:
    return DecayFit(model=model, ok=False, message=message, iterations=iterations)


def _design(params: np.ndarray, m: np.ndarray, free_offset: bool, base: float):
    A, r = params[0], params[1]
    rm = r**m
    # d(r^m)/dr = m r^(m-1); written without dividing by r.
    drm = m * r ** np.maximum(m - 1.0, 0.0)
    if free_offset:
        f = A * rm + params[2]
        J = np.column_stack([rm, A * drm, np.ones_like(m)])
    else:
        f = A * rm + base
        J = np.column_stack([rm, A * drm])
    return f, J


def _step_tolerance(y, n_par):
    """Absolute step floor: amplitude and offset in data units, rate dimensionless."""
    scale = REL_TOL * max(float(np.max(np.abs(y))), 1e-300)
    tol = np.full(n_par, scale)
    tol[1] = REL_TOL * REL_TOL
    return tol


def _initial_guess(m, y, w, free_offset, base):
    """Weighted log-linear fit of ``y - offset`` against ``m``."""
    off = base
    if free_offset:
        # Offset guess below the data, on the side the decay approaches.
        span = y.max() - y.min()
        off = min(base, y.min() - 0.1 * span) if y[np.argmin(m)] >= y[np.argmax(m)] else base
    z = y - off
    keep = z > 0
    if keep.sum() < 2:
        z = np.abs(z) + 1e-12
        keep = np.ones_like(z, dtype=bool)
    ww = w[keep] * z[keep] ** 2  # delta-method weights for log(z)
    X = np.column_stack([np.ones(keep.sum()), m[keep]])
    lz = np.log(z[keep])
    sw = np.sqrt(ww)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], lz * sw, rcond=None)
    A0, r0 = np.exp(coef[0]), np.exp(coef[1])
    if not np.isfinite(r0) or r0 <= 0:
        r0 = 0.99
    r0 = min(r0, 1.0)
    p = [A0, r0] + ([off] if free_offset else [])
    return np.array(p, dtype=float)


def fit_decay(
    m,
    y,
    weights=None,
    model: str = B_HAT,
    rate_max: float = 1.0 + RATE_TOL,
    absolute_sigma: Optional[bool] = None,
    p0=None,
) -> DecayFit:
    """Weighted least-squares decay fit.

    ``weights`` are inverse variances. With ``absolute_sigma`` (default: true
    when weights are given) the covariance is ``(J^T W J)^-1``; otherwise it is
    rescaled by the reduced chi-square. Failures come back with ``ok=False``
    rather than raising.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    free_offset, base = MODELS[model]
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    n_par = 3 if free_offset else 2
    if weights is None:
        w = np.ones_like(y)
        absolute_sigma = False if absolute_sigma is None else absolute_sigma
    else:
        w = np.asarray(weights, dtype=float)
        absolute_sigma = True if absolute_sigma is None else absolute_sigma

    if m.shape != y.shape or m.ndim != 1:
        raise ValueError("m and y must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w)) and np.all(w > 0)):
        return _failure(model, "non-finite values or non-positive weights")
    if np.unique(m).size < n_par:
        return _failure(model, f"need at least {n_par} distinct lengths")
    if np.ptp(y) == 0.0:
        return _failure(model, "degenerate data: all values equal")

    params = _initial_guess(m, y, w, free_offset, base) if p0 is None else np.array(p0, float)
    f, J = _design(params, m, free_offset, base)
    res = y - f
    cost = float(res @ (w * res))
    tol = _step_tolerance(y, n_par)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        JtW = J.T * w
        H = JtW @ J
        g = JtW @ res
        step = None
        while lam < 1e16:
            Hd = H + lam * np.diag(np.diag(H) + 1e-300)
            try:
                step = np.linalg.solve(Hd, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = params + step
            if trial[1] <= 0:
                lam *= 10.0
                continue
            f_t, J_t = _design(trial, m, free_offset, base)
            res_t = y - f_t
            cost_t = float(res_t @ (w * res_t))
            if cost_t <= cost:
                break
            lam *= 10.0
        else:
            step = None
        if step is None:
            converged = True  # no descent direction left at machine precision
            break
        small = np.all(np.abs(step) <= REL_TOL * np.abs(params) + tol)
        params, f, J, res, cost = trial, f_t, J_t, res_t, cost_t
        lam = max(lam / 10.0, 1e-12)
        if small or cost == 0.0:
            converged = True
            break
    if not converged:
        return _failure(model, "no convergence within iteration limit", it)

    A, r = params[0], params[1]
    if not (0.0 < r <= rate_max):
        return _failure(model, f"rate {r:.8g} outside (0, {rate_max}]", it)
    H = (J.T * w) @ J
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return _failure(model, "singular Jacobian at solution", it)
    dof = m.size - n_par
    if not absolute_sigma:
        cov = cov * (cost / dof if dof > 0 else np.nan)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return DecayFit(
        model=model,
        ok=True,
        amplitude=float(A),
        rate=float(r),
        offset=float(params[2]) if free_offset else None,
        amplitude_se=float(se[0]),
        rate_se=float(se[1]),
        offset_se=float(se[2]) if free_offset else None,
        residual_sum=cost,
        iterations=it,
        message="converged",
        covariance=cov,
    )


def fit_decay_batch(m, Y, W=None, model: str = B_HAT, p0=None, rate_max=1.0 + RATE_TOL, max_iter=100):
    """Fit every row of ``Y`` (shape ``(B, L)``) on shared lengths ``m``.

    Returns ``(params, ok)`` where ``params`` has shape ``(B, n_par)``; rows
    that fail carry NaN and ``ok=False``. ``p0`` is a common starting point
    (typically the full-data fit).
    """
    free_offset, base = MODELS[model]
    m = np.asarray(m, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    B, L = Y.shape
    n_par = 3 if free_offset else 2
    W = np.ones_like(Y) if W is None else np.broadcast_to(np.asarray(W, dtype=float), Y.shape)
    if p0 is None:
        P = np.array([_initial_guess(m, Y[b], W[b], free_offset, base) for b in range(B)])
    else:
        P = np.tile(np.asarray(p0, dtype=float), (B, 1))

    def model_eval(P):
        A = P[:, :1]
        r = P[:, 1:2]
        rm = r**m
        drm = m * r ** np.maximum(m - 1.0, 0.0)
        off = P[:, 2:3] if free_offset else base
        F = A * rm + off
        cols = [rm, A * drm] + ([np.ones_like(rm)] if free_offset else [])
        return F, np.stack(cols, axis=-1)

    F, J = model_eval(P)
    R = Y - F
    cost = np.einsum("bl,bl->b", R * W, R)
    lam = np.full(B, 1e-3)
    active = np.ones(B, dtype=bool)
    eye = np.eye(n_par)
    tol = np.stack([_step_tolerance(row, n_par) for row in Y]) if B else np.zeros((0, n_par))
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ja, Wa, Ra = J[idx], W[idx], R[idx]
        H = np.einsum("bli,bl,blj->bij", Ja, Wa, Ja)
        g = np.einsum("bli,bl,bl->bi", Ja, Wa, Ra)
        Hd = H + lam[idx, None, None] * (np.einsum("bii->bi", H)[:, :, None] * eye + 1e-300)
        try:
            step = np.linalg.solve(Hd, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.zeros_like(g)
        trial = P[idx] + step
        trial[:, 1] = np.where(trial[:, 1] > 0, trial[:, 1], P[idx, 1] * 0.5)
        Ft, Jt = model_eval(trial)
        Rt = Y[idx] - Ft
        ct = np.einsum("bl,bl->b", Rt * Wa, Rt)
        better = ct <= cost[idx]
        acc = idx[better]
        P[acc], J[acc], R[acc], cost[acc] = trial[better], Jt[better], Rt[better], ct[better]
        lam[acc] = np.maximum(lam[acc] / 10.0, 1e-12)
        lam[idx[~better]] *= 10.0
        small = np.all(np.abs(step) <= REL_TOL * np.abs(P[idx]) + tol[idx], axis=1)
        done = (better & small) | (lam[idx] > 1e16) | (cost[idx] == 0.0)
        active[idx[done]] = False
    ok = ~active & (np.ptp(Y, axis=1) > 0) & (P[:, 1] > 0) & (P[:, 1] <= rate_max) & np.all(np.isfinite(P), axis=1)
    P = np.where(ok[:, None], P, np.nan)
    return P, ok

"""Vectorized block updates shared by the optimizer.

Everything here is written so results are bit-identical no matter how
respondents or items are partitioned into blocks (the thread-count
determinism contract).  Two rules make that hold:

* no matrix-matrix products in the update path (BLAS kernels change
  summation order with operand shape); inner products over factors are
  accumulated with an explicit loop over k, which fixes the order of
  additions per cell;
* every reduction runs along the last axis of a row-contiguous array, so
  each row's result never depends on which other rows share the block.

Intercept vectors of unequal length are carried in a zero-padded J x Dmax
matrix together with the per-item count of real entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import PROB_FLOOR


@dataclass(frozen=True)
class LineSearch:
    """Backtracking settings: try gamma0, then shrink up to max_backtracks times."""

    gamma0: float = 1.0
    shrink: float = 0.5
    max_backtracks: int = 30
    sufficient_increase: float = 1e-4

    @property
    def attempts(self) -> int:
        return self.max_backtracks + 1


def pad_intercepts(intercepts):
    """Stack per-item intercept vectors into (J x Dmax pad, length vector)."""
    nt = np.array([d.size for d in intercepts], dtype=np.int64)
    d_pad = np.zeros((len(intercepts), int(nt.max())), dtype=np.float64)
    for j, d in enumerate(intercepts):
        d_pad[j, : d.size] = d
    return d_pad, nt


def unpad_intercepts(d_pad, nt):
    return [d_pad[j, : int(nt[j])].copy() for j in range(d_pad.shape[0])]


def outer_sum(u, vt):
    """Sum over k of u[:, k, None] * vt[k, None, :], accumulated in k order.

    Equals u @ vt but with a deterministic per-cell addition order that does
    not depend on array shapes.
    """
    out = np.zeros((u.shape[0], vt.shape[1]), dtype=np.float64)
    for k in range(u.shape[1]):
        out += u[:, k, None] * vt[k][None, :]
    return out


def quad_form_rows(x, s):
    """Row-wise quadratic form x_i' S x_i with a fixed (k, l) addition order."""
    q = np.zeros(x.shape[0], dtype=np.float64)
    for k in range(s.shape[0]):
        for l in range(s.shape[1]):
            q += x[:, k] * (s[k, l] * x[:, l])
    return q


def row_norm_sq(g):
    return (g * g).sum(axis=1)


def adjacent_cums(z, du, dl, y_is_min, y_is_max):
    """Upper/lower cumulative probabilities for each cell's own category."""
    cu = np.where(y_is_min, 1.0, expit(z + du))
    cl = np.where(y_is_max, 0.0, expit(z + dl))
    return cu, cl


def soft_threshold_rows(z, t):
    """Row-wise soft threshold with per-row thresholds t (n-vector)."""
    return np.sign(z) * np.maximum(np.abs(z) - t[:, None], 0.0)


# ---------------------------------------------------------------------------
# respondent phase


def _theta_value(th_rows, a_t, du, dl, y_is_min, y_is_max, mf, sinv):
    z = outer_sum(th_rows, a_t)
    cu, cl = adjacent_cums(z, du, dl, y_is_min, y_is_max)
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = (np.log(den) * mf).sum(axis=1)
    return ll - 0.5 * quad_form_rows(th_rows, sinv)


def _theta_value_and_grad(th_rows, a_t, du, dl, y_is_min, y_is_max, mf, sinv):
    z = outer_sum(th_rows, a_t)
    cu, cl = adjacent_cums(z, du, dl, y_is_min, y_is_max)
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = (np.log(den) * mf).sum(axis=1)
    f = ll - 0.5 * quad_form_rows(th_rows, sinv)
    w = ((cu * (1.0 - cu)) - (cl * (1.0 - cl))) / den * mf
    g = np.empty_like(th_rows)
    for k in range(th_rows.shape[1]):
        prior_k = np.zeros(th_rows.shape[0], dtype=np.float64)
        for l in range(sinv.shape[1]):
            prior_k += sinv[k, l] * th_rows[:, l]
        g[:, k] = (w * a_t[k][None, :]).sum(axis=1) - prior_k
    return f, g


def theta_block(th_rows, a_t, du, dl, y_is_min, y_is_max, mf, sinv,
                ls: LineSearch):
    """One line-searched gradient step for each respondent row in the block."""
    f0, g = _theta_value_and_grad(th_rows, a_t, du, dl, y_is_min, y_is_max, mf, sinv)
    gn2 = row_norm_sq(g)
    out = th_rows.copy()
    gamma = np.full(th_rows.shape[0], ls.gamma0)
    pending = np.ones(th_rows.shape[0], dtype=bool)
    for _ in range(ls.attempts):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        cand = th_rows[idx] + gamma[idx, None] * g[idx]
        f_try = _theta_value(cand, a_t, du[idx], dl[idx], y_is_min[idx],
                             y_is_max[idx], mf[idx], sinv)
        ok = f_try >= f0[idx] + ls.sufficient_increase * gamma[idx] * gn2[idx]
        acc = idx[ok]
        out[acc] = cand[ok]
        pending[acc] = False
        gamma[idx[~ok]] *= ls.shrink
    return out


# ---------------------------------------------------------------------------
# item phase: loadings


def _a_value(a_rows, th_t, du, dl, y_is_min, y_is_max, mf, lam):
    z = outer_sum(a_rows, th_t)
    cu, cl = adjacent_cums(z, du, dl, y_is_min, y_is_max)
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = (np.log(den) * mf).sum(axis=1)
    return ll - lam * np.abs(a_rows).sum(axis=1)


def _a_value_and_grad(a_rows, th_t, du, dl, y_is_min, y_is_max, mf, lam):
    z = outer_sum(a_rows, th_t)
    cu, cl = adjacent_cums(z, du, dl, y_is_min, y_is_max)
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = (np.log(den) * mf).sum(axis=1)
    f = ll - lam * np.abs(a_rows).sum(axis=1)
    w = ((cu * (1.0 - cu)) - (cl * (1.0 - cl))) / den * mf
    g = np.empty_like(a_rows)
    for k in range(a_rows.shape[1]):
        g[:, k] = (w * th_t[k][None, :]).sum(axis=1)
    return f, g


def a_block(a_rows, th_t, du, dl, y_is_min, y_is_max, mf, lam, ls: LineSearch):
    """One line-searched proximal gradient step per item row in the block.

    The acceptance value is the column log-likelihood minus lam * ||a||_1,
    evaluated at the post-threshold point; the sufficient-increase test uses
    the smooth-part gradient norm.
    """
    f0, g = _a_value_and_grad(a_rows, th_t, du, dl, y_is_min, y_is_max, mf, lam)
    gn2 = row_norm_sq(g)
    out = a_rows.copy()
    gamma = np.full(a_rows.shape[0], ls.gamma0)
    pending = np.ones(a_rows.shape[0], dtype=bool)
    if lam > 0:
        # rows pinned at zero by the threshold stay zero at every step size
        pinned = np.all(a_rows == 0.0, axis=1) & np.all(np.abs(g) <= lam, axis=1)
        pending[pinned] = False
    for _ in range(ls.attempts):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        step = a_rows[idx] + gamma[idx, None] * g[idx]
        cand = soft_threshold_rows(step, lam * gamma[idx])
        f_try = _a_value(cand, th_t, du[idx], dl[idx], y_is_min[idx],
                         y_is_max[idx], mf[idx], lam)
        ok = f_try >= f0[idx] + ls.sufficient_increase * gamma[idx] * gn2[idx]
        acc = idx[ok]
        out[acc] = cand[ok]
        pending[acc] = False
        gamma[idx[~ok]] *= ls.shrink
    return out


# ---------------------------------------------------------------------------
# item phase: intercepts


def _delta_rows(d_rows, valid):
    """Padded row-wise intercept-to-delta map; invalid positions become 0."""
    delta = np.zeros_like(d_rows)
    delta[:, 0] = d_rows[:, 0]
    if d_rows.shape[1] > 1:
        diffs = np.where(valid[:, 1:], d_rows[:, :-1] - d_rows[:, 1:], 1.0)
        delta[:, 1:] = np.log(diffs)
    return delta


def _d_from_delta_rows(delta, valid):
    """Padded row-wise inverse map; invalid positions forced to 0."""
    d = np.empty_like(delta)
    d[:, 0] = delta[:, 0]
    if delta.shape[1] > 1:
        e = np.where(valid[:, 1:], np.exp(delta[:, 1:]), 0.0)
        d[:, 1:] = delta[:, [0]] - np.cumsum(e, axis=1)
    return np.where(valid, d, 0.0)


def _d_value(d_rows, z, yt, nt_rows, idx_u, idx_l, mf, valid, sigma_d_sq):
    du = np.take_along_axis(d_rows, idx_u, axis=1)
    dl = np.take_along_axis(d_rows, idx_l, axis=1)
    cu = np.where(yt == 0, 1.0, expit(z + du))
    cl = np.where(yt == nt_rows[:, None], 0.0, expit(z + dl))
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = (np.log(den) * mf).sum(axis=1)
    quad = (np.where(valid, d_rows, 0.0) ** 2).sum(axis=1)
    return ll - 0.5 * quad / sigma_d_sq


def d_block(a_rows, th_t, d_rows, nt_rows, yt, mf, idx_u, idx_l, sigma_d_sq,
            ls: LineSearch):
    """One line-searched gradient step in delta space per item row.

    Returns a padded intercept block whose rows stay strictly decreasing;
    proposals that underflow or overflow the reparameterization are
    rejected within the backtracking loop.
    """
    n_b, d_max = d_rows.shape
    valid = np.arange(d_max)[None, :] < nt_rows[:, None]
    z = outer_sum(a_rows, th_t)

    du = np.take_along_axis(d_rows, idx_u, axis=1)
    dl = np.take_along_axis(d_rows, idx_l, axis=1)
    cu = np.where(yt == 0, 1.0, expit(z + du))
    cl = np.where(yt == nt_rows[:, None], 0.0, expit(z + dl))
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = (np.log(den) * mf).sum(axis=1)
    quad = (np.where(valid, d_rows, 0.0) ** 2).sum(axis=1)
    f0 = ll - 0.5 * quad / sigma_d_sq

    up_w = cu * (1.0 - cu) / den
    dn_w = cl * (1.0 - cl) / den
    g_d = np.zeros_like(d_rows)
    for m in range(d_max):
        up = np.where((yt == m + 1) & (mf > 0), up_w, 0.0).sum(axis=1)
        dn = np.where((yt == m) & (mf > 0) & ((m + 1) <= nt_rows[:, None]),
                      dn_w, 0.0).sum(axis=1)
        g_d[:, m] = up - dn
    g_d -= np.where(valid, d_rows, 0.0) / sigma_d_sq
    g_d = np.where(valid, g_d, 0.0)

    delta = _delta_rows(d_rows, valid)
    trail = np.cumsum(g_d[:, ::-1], axis=1)[:, ::-1]
    g_delta = np.empty_like(g_d)
    g_delta[:, 0] = trail[:, 0]
    if d_max > 1:
        g_delta[:, 1:] = -np.exp(delta[:, 1:]) * trail[:, 1:]
    g_delta = np.where(valid, g_delta, 0.0)
    gn2 = row_norm_sq(g_delta)

    out = d_rows.copy()
    gamma = np.full(n_b, ls.gamma0)
    pending = np.ones(n_b, dtype=bool)
    for _ in range(ls.attempts):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            delta_try = delta[idx] + gamma[idx, None] * g_delta[idx]
            d_try = _d_from_delta_rows(delta_try, valid[idx])
            # strict ordering requires every exp term positive and finite
            usable = np.isfinite(d_try).all(axis=1)
            if d_max > 1:
                e = np.where(valid[idx, 1:], np.exp(delta_try[:, 1:]), 1.0)
                usable &= (e > 0.0).all(axis=1) & np.isfinite(e).all(axis=1)
            f_try = _d_value(d_try, z[idx], yt[idx], nt_rows[idx], idx_u[idx],
                             idx_l[idx], mf[idx], valid[idx], sigma_d_sq)
        ok = usable & (f_try >= f0[idx] + ls.sufficient_increase * gamma[idx] * gn2[idx])
        acc = idx[ok]
        out[acc] = d_try[ok]
        pending[acc] = False
        gamma[idx[~ok]] *= ls.shrink
    return out


# ---------------------------------------------------------------------------
# full objective


def full_objective(a, d_pad, nt, th_t, yt, mf_t, idx_u, idx_l, sinv, log_det,
                   lam, sigma_d_sq):
    """Objective over the whole data set in one deterministic global pass.

    Layout is item-major (J x N).  Matches the per-cell reference
    implementation up to floating-point addition order.
    """
    n = th_t.shape[1]
    k = th_t.shape[0]
    d_max = d_pad.shape[1]
    valid = np.arange(d_max)[None, :] < nt[:, None]

    z = outer_sum(a, th_t)
    du = np.take_along_axis(d_pad, idx_u, axis=1)
    dl = np.take_along_axis(d_pad, idx_l, axis=1)
    cu = np.where(yt == 0, 1.0, expit(z + du))
    cl = np.where(yt == nt[:, None], 0.0, expit(z + dl))
    den = np.maximum(cu - cl, PROB_FLOOR)
    ll = float(np.sum((np.log(den) * mf_t).sum(axis=1)))

    quad = quad_form_rows(np.ascontiguousarray(th_t.T), sinv)
    prior_theta = n * (-0.5 * k * np.log(2.0 * np.pi) - 0.5 * log_det) \
        - 0.5 * float(np.sum(quad))

    if lam > 0:
        prior_a = a.size * np.log(lam / 2.0) - lam * float(np.sum(np.abs(a)))
    else:
        prior_a = 0.0

    n_thresh = float(np.sum(nt))
    quad_d = float(np.sum((np.where(valid, d_pad, 0.0) ** 2).sum(axis=1)))
    prior_d = -0.5 * n_thresh * np.log(2.0 * np.pi * sigma_d_sq) \
        - 0.5 * quad_d / sigma_d_sq

    return float(ll + prior_theta + prior_a + prior_d)

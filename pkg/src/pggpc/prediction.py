"""Predictive latent marginals, class probabilities, and test metrics.

The latent predictive at x* is Gaussian with

    mu*     = K_*m K_mm^{-1} mu
    sigma*^2 = K_** + K_*m K_mm^{-1} (Sigma K_mm^{-1} - I) K_m*

and the class probability integrates the logistic link against it with
Gauss-Hermite quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import build_gram, kern_diag, kern_matrix
from .pg import sigmoid

__all__ = ["PredictiveMarginal", "latent_predict", "class_prob", "evaluate", "EvalReport"]


@dataclass(frozen=True)
class PredictiveMarginal:
    """Latent mean/variance and class probability at one test point."""

    mu_star: float
    var_star: float
    p_pos: float


@dataclass(frozen=True)
class EvalReport:
    """Test-set metrics: 0/1 error and mean negative log predictive likelihood."""

    error_rate: float
    mean_nll: float
    n: int


def latent_predict(state, x_star, gram=None):
    """Latent predictive mean(s) and variance(s) at new inputs.

    Parameters
    ----------
    state : VariationalState
    x_star : array_like, shape (d,) or (n_star, d)
    gram : GramBundle, optional
        Any bundle sharing this state's (Z, params); its K_mm factorization
        is reused.

    Returns
    -------
    (mu_star, var_star)
        Floats for a single point, arrays of shape (n_star,) otherwise.
        Variances are floored at 1e-12 against round-off.
    """
    x_star = np.asarray(x_star, dtype=float)
    single = x_star.ndim == 1
    X = np.atleast_2d(x_star)
    if gram is None:
        gram = build_gram(np.empty((0, state.Z.shape[1])), state.Z, state.params)
    A = kern_matrix(X, state.Z, state.params)
    W = gram.solve_mm(A.T)  # K_mm^{-1} K_m*
    mu_star = W.T @ state.mu
    k_ss = kern_diag(X, state.params)
    var_star = (
        k_ss
        - np.einsum("ij,ji->i", A, W)
        + np.einsum("ji,jk,ki->i", W, state.Sigma, W)
    )
    var_star = np.maximum(var_star, 1e-12)
    if single:
        return float(mu_star[0]), float(var_star[0])
    return mu_star, var_star


# A single Gauss-Hermite rule is only accurate while the Gaussian is not too
# wide relative to the logistic's analyticity strip (poles at +/- i pi): with
# 20 nodes the error is ~2e-10 at unit width but ~4e-3 at width 5.  Wider
# Gaussians are therefore decomposed exactly as a convolution
# N(mu, v^2 + s^2) = N(mu, v^2) * N(0, s^2) and the outer convolution is
# discretized on a comb (trapezoid over an entire function: error below
# 1e-12 at the spacings used), so the Q-node rule only ever integrates
# unit-width components.
_COMP_WIDTH = 1.0
_SINGLE_RULE_VAR = _COMP_WIDTH**2 * (1.0 + 1.0 / 16.0)


def class_prob(mu_star, var_star, order=20):
    """p(y* = +1) = integral of sigma(f) N(f | mu*, sigma*^2) df by quadrature.

    Gauss-Hermite with ``order`` nodes (default 20).  Variances above a small
    cap are first decomposed exactly into a comb of unit-width Gaussian
    components so the rule always operates in its accurate regime; the result
    is converged to ~1e-10 by order 20 across mu* in [-5, 5], sigma* in
    [0.1, 5].  A zero variance degenerates to sigmoid(mu*), and the
    construction preserves the exact symmetry p(-mu*) = 1 - p(mu*).

    Parameters
    ----------
    mu_star, var_star : float or array_like
    order : int, optional

    Returns
    -------
    float or ndarray
        Probabilities in (0, 1).
    """
    mu = np.asarray(mu_star, dtype=float)
    var = np.asarray(var_star, dtype=float)
    if np.any(var < 0.0):
        raise ValueError("predictive variance must be nonnegative")
    shape = np.broadcast_shapes(mu.shape, var.shape)
    mu_flat = np.broadcast_to(mu, shape).ravel()
    var_flat = np.broadcast_to(var, shape).ravel()
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    inv_sqrt_pi = 1.0 / np.sqrt(np.pi)
    out = np.empty(mu_flat.shape)

    narrow = var_flat <= _SINGLE_RULE_VAR
    if narrow.any():
        f = mu_flat[narrow, None] + np.sqrt(2.0 * var_flat[narrow])[:, None] * nodes
        out[narrow] = sigmoid(f) @ weights * inv_sqrt_pi
    wide = ~narrow
    if wide.any():
        m_w = mu_flat[wide]
        v2 = var_flat[wide] - _COMP_WIDTH**2
        v = np.sqrt(v2)
        h = np.minimum(0.6, 0.5 * v)
        n_side = int(np.ceil((8.5 * v / h).max())) + 2
        k = np.arange(-n_side, n_side + 1)
        offsets = h[:, None] * k
        comb = np.exp(-0.5 * offsets**2 / v2[:, None])
        comb /= comb.sum(axis=1, keepdims=True)
        acc = np.zeros(m_w.shape)
        scaled = np.sqrt(2.0) * _COMP_WIDTH * nodes
        for j in range(k.size):
            f = (m_w + offsets[:, j])[:, None] + scaled
            acc += comb[:, j] * (sigmoid(f) @ weights) * inv_sqrt_pi
        out[wide] = acc
    return out.reshape(shape)[()]


def evaluate(state, test_set, quad_order=20):
    """Error rate and mean negative log predictive likelihood on a test set.

    A point counts as an error when sign(p_pos - 1/2) differs from its
    label; probabilities are floored at 1e-12 before the log.
    """
    if test_set.n == 0:
        raise ValueError("empty test set")
    mu, var = latent_predict(state, test_set.X)
    p_pos = class_prob(mu, var, order=quad_order)
    error = float(np.mean(np.sign(p_pos - 0.5) != test_set.y))
    p_label = np.where(test_set.y > 0, p_pos, 1.0 - p_pos)
    nll = float(-np.mean(np.log(np.maximum(p_label, 1e-12))))
    return EvalReport(error_rate=error, mean_nll=nll, n=test_set.n)

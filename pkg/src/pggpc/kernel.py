"""Squared-exponential kernel, Gram assembly, Cholesky utilities, gradients.

The kernel is k(x, x') = a^2 exp(-||x - x'||^2 / (2 l^2)) plus an additive
white-noise (jitter) term that contributes only when x and x' are the same
point by index.  Hyperparameters are carried in log space so optimizers can
work unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, cholesky

__all__ = [
    "KernelParams",
    "GramBundle",
    "FactorizationError",
    "kern",
    "kern_matrix",
    "kern_diag",
    "build_gram",
    "kern_grad",
    "chol_with_escalation",
    "sq_dists",
]

_HYPER_NAMES = ("log_lengthscale", "log_amplitude", "log_jitter")


class FactorizationError(RuntimeError):
    """Cholesky factorization failed even after maximum jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel hyperparameters in log space.

    Attributes
    ----------
    log_lengthscale : float
        Log of the common lengthscale l (shared across input dimensions).
    log_amplitude : float
        Log of the signal amplitude a (the kernel carries a^2).
    log_jitter : float
        Log of the additive diagonal noise variance.
    """

    log_lengthscale: float = 0.0
    log_amplitude: float = 0.0
    log_jitter: float = float(np.log(1e-6))

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel log-parameters must be finite")

    @property
    def lengthscale(self):
        return float(np.exp(self.log_lengthscale))

    @property
    def amplitude(self):
        return float(np.exp(self.log_amplitude))

    @property
    def jitter(self):
        return float(np.exp(self.log_jitter))

    def as_array(self):
        """Hyperparameters as the vector (log l, log a, log jitter)."""
        return np.array(
            [self.log_lengthscale, self.log_amplitude, self.log_jitter], dtype=float
        )

    @classmethod
    def from_array(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), float(vec[1]), float(vec[2]))


def sq_dists(X, Z):
    """Pairwise squared Euclidean distances, clamped at zero."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    xx = np.sum(X * X, axis=1)[:, None]
    zz = np.sum(Z * Z, axis=1)[None, :]
    d2 = xx + zz - 2.0 * (X @ Z.T)
    return np.maximum(d2, 0.0)


def kern(x, xp, params, same_index=False):
    """Kernel value between two points.

    Parameters
    ----------
    x, xp : array_like, shape (d,)
        Input locations; dimensions must match.
    params : KernelParams
    same_index : bool, optional
        True when x and xp refer to the same point by index, in which case
        the white-noise jitter is added.

    Returns
    -------
    float
    """
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    if x.shape != xp.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {xp.shape}")
    d2 = float(np.sum((x - xp) ** 2))
    val = params.amplitude**2 * np.exp(-0.5 * d2 / params.lengthscale**2)
    if same_index:
        val += params.jitter
    return float(val)


def kern_matrix(X, Z, params, same=False):
    """Dense kernel matrix between row sets X and Z.

    With ``same=True`` the two sets are taken to be identical point lists and
    the jitter is added on the diagonal.
    """
    d2 = sq_dists(X, Z)
    K = params.amplitude**2 * np.exp(-0.5 * d2 / params.lengthscale**2)
    if same:
        K[np.diag_indices_from(K)] += params.jitter
    return K


def kern_diag(X, params):
    """Diagonal of the full kernel matrix: a^2 + jitter per point."""
    n = np.atleast_2d(X).shape[0]
    return np.full(n, params.amplitude**2 + params.jitter)


def chol_with_escalation(K, base_jitter):
    """Lower Cholesky factor of K, escalating added jitter on failure.

    The matrix is attempted as given, then with base_jitter * 10**k added to
    the diagonal for k = 1..6.  Returns (L, extra) where ``extra`` is the
    additional diagonal that was required (0.0 in the usual case).

    Raises
    ------
    FactorizationError
        If the factorization still fails at 10^6 times the base jitter.
    """
    eye = np.eye(K.shape[0])
    for extra in [0.0] + [base_jitter * 10.0**k for k in range(1, 7)]:
        try:
            L = cholesky(K + extra * eye, lower=True)
            return L, extra
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        "Cholesky failed after escalating jitter to 1e6x the configured value; "
        "inducing inputs or hyperparameters are degenerate"
    )


@dataclass(eq=False)
class GramBundle:
    """Gram matrices shared by the inference and prediction paths.

    Attributes
    ----------
    K_mm : ndarray, shape (m, m)
        Inducing-point kernel matrix including the jitter diagonal (plus any
        escalation recorded in ``jitter_extra``).
    chol_Kmm : ndarray, shape (m, m)
        Lower Cholesky factor of ``K_mm``.
    K_nm : ndarray, shape (n, m)
        Cross-kernel between the batch and the inducing inputs (no jitter).
    k_diag : ndarray, shape (n,)
        Diagonal of the batch's full kernel matrix.
    jitter_extra : float
        Extra diagonal added by escalation beyond the configured jitter.
    """

    K_mm: np.ndarray
    chol_Kmm: np.ndarray
    K_nm: np.ndarray
    k_diag: np.ndarray
    jitter_extra: float = 0.0

    def solve_mm(self, B):
        """K_mm^{-1} B via the cached Cholesky factor."""
        return cho_solve((self.chol_Kmm, True), B)

    @cached_property
    def Kmm_inv(self):
        """Explicit K_mm^{-1}, symmetrized against round-off."""
        inv = self.solve_mm(np.eye(self.K_mm.shape[0]))
        return 0.5 * (inv + inv.T)

    @cached_property
    def kappa(self):
        """kappa = K_nm K_mm^{-1}, shape (n, m)."""
        return self.solve_mm(self.K_nm.T).T

    @cached_property
    def ktilde(self):
        """Residual diagonal K_ii - kappa_i K_mm kappa_i^T, clamped at 0."""
        resid = self.k_diag - np.sum(self.kappa * self.K_nm, axis=1)
        return np.maximum(resid, 0.0)

    @property
    def logdet_Kmm(self):
        return float(2.0 * np.sum(np.log(np.diag(self.chol_Kmm))))


def build_gram(X_batch, Z, params, mm=None):
    """Assemble the GramBundle for a batch against inducing inputs Z.

    Parameters
    ----------
    X_batch : ndarray, shape (s, d)
    Z : ndarray, shape (m, d)
    params : KernelParams
    mm : GramBundle, optional
        A bundle whose (K_mm, chol_Kmm) were built from the same Z and
        params; the factorization is reused instead of recomputed.

    Returns
    -------
    GramBundle
    """
    X_batch = np.atleast_2d(np.asarray(X_batch, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if mm is None:
        K_mm = kern_matrix(Z, Z, params, same=True)
        L, extra = chol_with_escalation(K_mm, params.jitter)
        if extra:
            K_mm = K_mm + extra * np.eye(K_mm.shape[0])
    else:
        K_mm, L, extra = mm.K_mm, mm.chol_Kmm, mm.jitter_extra
    K_nm = kern_matrix(X_batch, Z, params)
    k_diag = kern_diag(X_batch, params)
    return GramBundle(K_mm=K_mm, chol_Kmm=L, K_nm=K_nm, k_diag=k_diag, jitter_extra=extra)


def kern_grad(X, Z, params):
    """Gram-matrix derivatives with respect to each log hyperparameter.

    Returns
    -------
    dict
        Maps each of "log_lengthscale", "log_amplitude", "log_jitter" to a
        (dK_mm, dK_nm, dk_diag) triple matching the shapes produced by
        :func:`build_gram` (jitter included only where the kernel adds it:
        the K_mm diagonal and k_diag, never the cross matrix).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, m = X.shape[0], Z.shape[0]
    ell2 = params.lengthscale**2
    a2 = params.amplitude**2

    d2_mm = sq_dists(Z, Z)
    d2_nm = sq_dists(X, Z)
    S_mm = a2 * np.exp(-0.5 * d2_mm / ell2)
    S_nm = a2 * np.exp(-0.5 * d2_nm / ell2)

    return {
        "log_lengthscale": (S_mm * d2_mm / ell2, S_nm * d2_nm / ell2, np.zeros(n)),
        "log_amplitude": (2.0 * S_mm, 2.0 * S_nm, np.full(n, 2.0 * a2)),
        "log_jitter": (
            params.jitter * np.eye(m),
            np.zeros((n, m)),
            np.full(n, params.jitter),
        ),
    }

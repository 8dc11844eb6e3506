"""Model state: dataset container, variational state, initialization, checkpoints.

The variational posterior over inducing values u is the Gaussian
q(u) = N(mu, Sigma), stored canonically in natural parameters
eta1 = Sigma^{-1} mu and eta2 = -1/2 Sigma^{-1}; (mu, Sigma) are derived
and refreshed after every natural-space update.  Per-datum tilts c_i
parameterize the Polya-Gamma factors.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .kernel import KernelParams, build_gram

__all__ = [
    "Dataset",
    "VariationalState",
    "kmeanspp_init",
    "init_state",
    "save_checkpoint",
    "load_checkpoint",
    "natural_to_moments",
    "moments_to_natural",
]

CHECKPOINT_SCHEMA = "pggpc.checkpoint.v1"


@dataclass(frozen=True)
class Dataset:
    """A binary classification dataset.

    Attributes
    ----------
    X : ndarray, shape (n, d)
        Feature matrix, finite float64.
    y : ndarray, shape (n,)
        Labels, exactly -1.0 or +1.0.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or Inf")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be exactly -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        """Dataset restricted to the given row indices."""
        return Dataset(self.X[idx], self.y[idx])


def natural_to_moments(eta1, eta2):
    """(mu, Sigma) from natural parameters; requires -2 eta2 SPD."""
    prec = -2.0 * eta2
    L = cholesky(0.5 * (prec + prec.T), lower=True)
    Sigma = cho_solve((L, True), np.eye(prec.shape[0]))
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = Sigma @ eta1
    return mu, Sigma


def moments_to_natural(mu, Sigma):
    """(eta1, eta2) from moment parameters; requires Sigma SPD."""
    L = cholesky(0.5 * (Sigma + Sigma.T), lower=True)
    prec = cho_solve((L, True), np.eye(Sigma.shape[0]))
    prec = 0.5 * (prec + prec.T)
    return prec @ mu, -0.5 * prec


@dataclass
class VariationalState:
    """Sparse variational posterior state.

    Attributes
    ----------
    eta1 : ndarray, shape (m,)
        First natural parameter Sigma^{-1} mu (canonical storage).
    eta2 : ndarray, shape (m, m)
        Second natural parameter -1/2 Sigma^{-1}; -2 eta2 is always SPD.
    mu : ndarray, shape (m,)
        Derived posterior mean of the inducing values.
    Sigma : ndarray, shape (m, m)
        Derived posterior covariance.
    c : ndarray, shape (n,) or None
        Local Polya-Gamma tilts, nonnegative; None until bound to data.
    Z : ndarray, shape (m, d)
        Inducing inputs (fixed during training).
    params : KernelParams
    """

    eta1: np.ndarray
    eta2: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    c: np.ndarray | None
    Z: np.ndarray
    params: KernelParams

    @property
    def m(self):
        return self.Z.shape[0]

    @classmethod
    def from_natural(cls, eta1, eta2, Z, params, c=None):
        mu, Sigma = natural_to_moments(eta1, eta2)
        return cls(eta1=eta1, eta2=eta2, mu=mu, Sigma=Sigma, c=c, Z=Z, params=params)

    def with_natural(self, eta1, eta2):
        """New state at the given natural parameters (moments refreshed)."""
        mu, Sigma = natural_to_moments(eta1, eta2)
        return replace(self, eta1=eta1, eta2=eta2, mu=mu, Sigma=Sigma)

    def clone(self):
        return replace(
            self,
            eta1=self.eta1.copy(),
            eta2=self.eta2.copy(),
            mu=self.mu.copy(),
            Sigma=self.Sigma.copy(),
            c=None if self.c is None else self.c.copy(),
        )


def kmeanspp_init(X, m, rng, n_lloyd=10):
    """Inducing inputs from k-means++ seeding plus a fixed Lloyd budget.

    Parameters
    ----------
    X : ndarray, shape (n, d)
    m : int
        Number of centers, 1 <= m <= n.
    rng : numpy.random.Generator
    n_lloyd : int, optional
        Lloyd refinement iterations after seeding (default 10).

    Returns
    -------
    ndarray, shape (m, d)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")

    centers = np.empty((m, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total > 0.0:
            centers[j] = X[rng.choice(n, p=d2 / total)]
        else:
            centers[j] = X[rng.integers(n)]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))

    for _ in range(n_lloyd):
        d2_all = (
            np.sum(X * X, axis=1)[:, None]
            - 2.0 * X @ centers.T
            + np.sum(centers * centers, axis=1)[None, :]
        )
        assign = np.argmin(d2_all, axis=1)
        for j in range(m):
            mask = assign == j
            if mask.any():
                centers[j] = X[mask].mean(axis=0)
    return centers


def init_state(dataset, m, params, rng, Z=None):
    """Prior-initialized variational state.

    Sets eta2 = -1/2 K_mm^{-1} and eta1 = 0, so that (mu, Sigma) is the GP
    prior (0, K_mm) over the inducing values; the tilts c are then set by
    one local update from the prior so the first bound evaluation is valid.
    Inducing inputs come from k-means++ unless ``Z`` is given explicitly.
    """
    from .inference import local_update  # deferred to avoid an import cycle

    if Z is None:
        Z = kmeanspp_init(dataset.X, m, rng)
    else:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        m = Z.shape[0]
    gram = build_gram(dataset.X, Z, params)
    eta2 = -0.5 * gram.Kmm_inv
    eta1 = np.zeros(m)
    mu = np.zeros(m)
    Sigma = gram.K_mm.copy()
    state = VariationalState(
        eta1=eta1, eta2=eta2, mu=mu, Sigma=Sigma, c=np.zeros(dataset.n), Z=Z, params=params
    )
    state.c = local_update(state, dataset, gram=gram)
    return state


def _encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(doc):
    arr = np.frombuffer(base64.b64decode(doc["data"]), dtype="<f8")
    return arr.reshape(doc["shape"]).copy()


def save_checkpoint(path, state, seed, preprocess=None):
    """Write a versioned JSON checkpoint (bit-exact array round-trip).

    Stores the inducing inputs, kernel parameters, natural parameters, and
    the training seed; optionally a feature preprocessing block (per-column
    means/stds) so predictions can be made from raw inputs.  Array payloads
    are base64-encoded little-endian float64, so save/load/save reproduces
    the file byte for byte.
    """
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "seed": int(seed),
        "params": {
            "log_lengthscale": state.params.log_lengthscale,
            "log_amplitude": state.params.log_amplitude,
            "log_jitter": state.params.log_jitter,
        },
        "arrays": {
            "Z": _encode_array(state.Z),
            "eta1": _encode_array(state.eta1),
            "eta2": _encode_array(state.eta2),
        },
    }
    if preprocess is not None:
        doc["preprocess"] = {
            "means": _encode_array(preprocess["means"]),
            "stds": _encode_array(preprocess["stds"]),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    (VariationalState, int, dict or None)
        The restored state (moments refreshed from the natural parameters,
        tilts unset), the stored seed, and the preprocessing block (arrays
        under "means"/"stds") when present.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unrecognized checkpoint schema: {doc.get('schema')!r}")
    params = KernelParams(**doc["params"])
    Z = _decode_array(doc["arrays"]["Z"])
    eta1 = _decode_array(doc["arrays"]["eta1"])
    eta2 = _decode_array(doc["arrays"]["eta2"])
    state = VariationalState.from_natural(eta1, eta2, Z, params)
    preprocess = None
    if "preprocess" in doc:
        preprocess = {
            "means": _decode_array(doc["preprocess"]["means"]),
            "stds": _decode_array(doc["preprocess"]["stds"]),
        }
    return state, int(doc["seed"]), preprocess

"""Canonical correlation analysis for supervised dimensionality reduction.

Two row-aligned views (input features and per-item class embeddings) are
projected onto paired directions that maximize their correlation. The
regularized problem whitens each view with (cov + eps*I)^(-1/2) and reads the
paired directions off an SVD of the whitened cross-covariance. Projected
training components have exactly unit sample variance, and the stored
correlations are the sample correlations of the projected training views.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

_RANK_TOL = 1e-12


@dataclass
class CcaModel:
    proj_x: np.ndarray        # (d, r)
    proj_y: np.ndarray        # (e, r)
    correlations: np.ndarray  # (r,) in [0, 1], non-increasing
    eps: float
    mean_x: np.ndarray        # (d,)
    mean_y: np.ndarray        # (e,)

    @property
    def rank(self):
        return self.proj_x.shape[1]


def _inv_sqrt(cov, eps, view_name):
    evals, evecs = la.eigh(cov)
    if eps == 0.0 and evals.min() <= _RANK_TOL * max(evals.max(), 1.0):
        raise ValueError(
            f"{view_name} covariance is rank-deficient; pass eps > 0"
        )
    evals = np.maximum(evals + eps, _RANK_TOL)
    return evecs @ ((evecs / np.sqrt(evals)).T)


def fit_cca(X, Y, rank, eps=None):
    """Fit paired projections of two row-aligned views.

    Parameters
    ----------
    X : ndarray, shape (n, d)
    Y : ndarray, shape (n, e)
        Row i of Y is the output embedding of item i's class.
    rank : int
        Number of components, at most min(d, e).
    eps : float, optional
        Ridge added to both view covariances. Defaults to
        1e-4 * trace(cov) / dim per view; pass 0 to disable.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("views must have the same number of rows")
    n, d = X.shape
    e = Y.shape[1]
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not 1 <= rank <= min(d, e):
        raise ValueError(f"rank={rank} must be in [1, {min(d, e)}]")

    mean_x = X.mean(axis=0)
    mean_y = Y.mean(axis=0)
    Xc = X - mean_x
    Yc = Y - mean_y
    denom = n - 1
    Cxx = Xc.T @ Xc / denom
    Cyy = Yc.T @ Yc / denom
    Cxy = Xc.T @ Yc / denom

    if eps is None:
        eps_x = 1e-4 * np.trace(Cxx) / d
        eps_y = 1e-4 * np.trace(Cyy) / e
    else:
        eps_x = eps_y = float(eps)

    isx = _inv_sqrt(Cxx, eps_x, "X view")
    isy = _inv_sqrt(Cyy, eps_y, "Y view")
    U, _, Vt = np.linalg.svd(isx @ Cxy @ isy, full_matrices=False)
    proj_x = isx @ U[:, :rank]
    proj_y = isy @ Vt[:rank].T

    # Unit sample variance per projected component, then the eigenvector sign
    # ambiguity is fixed by making each proj_x column's largest entry positive
    # (proj_y flips along with it, keeping correlations non-negative).
    zx = Xc @ proj_x
    zy = Yc @ proj_y
    proj_x /= zx.std(axis=0, ddof=1)
    proj_y /= zy.std(axis=0, ddof=1)
    flips = np.where(
        proj_x[np.abs(proj_x).argmax(axis=0), np.arange(rank)] < 0, -1.0, 1.0
    )
    proj_x *= flips
    proj_y *= flips

    zx = Xc @ proj_x
    zy = Yc @ proj_y
    correlations = (zx * zy).sum(axis=0) / denom
    correlations = np.clip(correlations, 0.0, 1.0 + 1e-9)

    return CcaModel(
        proj_x=proj_x,
        proj_y=proj_y,
        correlations=correlations,
        eps=float(eps_x),
        mean_x=mean_x,
        mean_y=mean_y,
    )


def project(model, X):
    """Project features into the learned latent space: (x - mean) @ proj_x."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.proj_x.shape[0]:
        raise ValueError(
            f"feature dim {X.shape[1]} does not match model dim "
            f"{model.proj_x.shape[0]}"
        )
    return (X - model.mean_x) @ model.proj_x


def project_y(model, Y):
    """Project output embeddings with the paired view projection."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[1] != model.proj_y.shape[0]:
        raise ValueError(
            f"embedding dim {Y.shape[1]} does not match model dim "
            f"{model.proj_y.shape[0]}"
        )
    return (Y - model.mean_y) @ model.proj_y

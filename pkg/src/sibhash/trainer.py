"""Sequential greedy learning of hash projections with joint theta estimation.

Bits are learned one at a time against a residual target matrix
``R_0 = c * O``, ``R_l = R_{l-1} - b_l b_l^T`` where O holds the pair targets
o_ij scaled so that c-bit code inner products can realize them. Each bit is
initialized from the leading eigenvector of ``Phi^T R Phi`` and refined by
descending the sigmoid-smoothed least-squares loss

    sum_ij (tanh(s w.phi_i) * tanh(s w.phi_j) - r_ij)^2

with a backtracking line search that only accepts improving steps; the
refined direction is kept only if it beats the spectral one on the discrete
criterion ``b^T R b``. In ``learned_theta`` mode every bit is followed by the
closed-form update

    theta_l = (sum_sib H_ij - lam) / (n_sib + lam),  H_ij = b_i.b_j / l

(the minimizer of the sibling terms plus ``lam * (theta + 1)^2``), after
which the sibling entries of the residual are rebuilt.

Training runs on all N^2 ordered pairs up to ``max_dense_items`` items;
beyond that, pairs are subsampled per category with a seeded generator.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .codes import sign_encode
from .embeddings import (
    PairTargetSpec,
    class_target_matrix,
    sibling_class_matrix,
)

_CENTER_TOL = 1e-6


@dataclass
class TrainConfig:
    """Optimization knobs; target semantics live in :class:`PairTargetSpec`."""

    code_len: int
    grad_steps: int = 500
    step_size: float = 1e-2
    smoothing: float = 1.0
    seed: int = 0
    include_diagonal: bool = True
    max_dense_items: int = 3000
    pairs_per_category: int = 300_000
    grad_tol: float = 1e-9

    def __post_init__(self):
        if self.code_len < 1:
            raise ValueError("code_len must be >= 1")
        if self.grad_steps < 0:
            raise ValueError("grad_steps must be >= 0")
        if self.step_size <= 0 or self.smoothing <= 0:
            raise ValueError("step_size and smoothing must be positive")
        if self.max_dense_items < 2 or self.pairs_per_category < 1:
            raise ValueError("max_dense_items >= 2, pairs_per_category >= 1")


@dataclass
class HashModel:
    """Trained projections plus the references needed to encode queries.

    ``center_mean`` is set when the model was trained on explicitly centered
    raw features (no kernel/CCA stage owns the centering); ``encode`` then
    subtracts it. ``theta0`` holds the configured theta (the fixed value in
    fixed_theta mode, the initial value in learned_theta mode).
    """

    projection: np.ndarray                 # (c, d)
    mode: str
    lam: float = 1.0
    theta0: float = -0.5
    theta_trajectory: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.float64)
    )
    center_mean: np.ndarray | None = None
    kernel_id: str | None = None
    cca_id: str | None = None
    bit_balance: np.ndarray | None = None  # |sum_i b_il| / N, diagnostics only

    @property
    def code_len(self):
        return self.projection.shape[0]

    @property
    def final_theta(self):
        if self.theta_trajectory.size == 0:
            return None
        return float(self.theta_trajectory[-1])

    def encode(self, features):
        features = np.asarray(features, dtype=np.float64)
        if self.center_mean is not None:
            features = features - self.center_mean
        return sign_encode(features, self.projection)


def smoothed_gradient(w, features, residual_targets, smoothing):
    """Analytic gradient of the smoothed pair-fitting loss w.r.t. ``w``.

    The loss is ``sum_ij (t_i t_j - r_ij)^2`` over all ordered pairs with
    ``t_i = tanh(smoothing * w.phi_i)``; ``residual_targets`` may be any
    square matrix (no symmetry assumed).
    """
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    phi = np.asarray(features, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r = np.asarray(residual_targets, dtype=np.float64)
    t = np.tanh(smoothing * (phi @ w))
    dl_dt = 2.0 * (2.0 * t * (t @ t) - r @ t - r.T @ t)
    return phi.T @ (dl_dt * (smoothing * (1.0 - t * t)))


def learn_theta(codes, sibling_pairs, lam):
    """Closed-form sibling similarity from the bits learned so far.

    Minimizes ``sum_sib (H_ij - theta)^2 + lam * (theta + 1)^2`` where
    ``H_ij`` is the per-pair mean bit agreement; the result is clamped to
    [-1, 1].
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[1] < 1:
        raise ValueError("codes must be an N x l matrix with l >= 1")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    si, sj = _pair_arrays(sibling_pairs)
    if si.size == 0:
        raise ValueError("no sibling pairs: theta is undefined")
    h = (codes[si] * codes[sj]).sum(axis=1) / codes.shape[1]
    theta = (h.sum() - lam) / (si.size + lam)
    return float(np.clip(theta, -1.0, 1.0))


def objective_value(codes, targets, theta, lam):
    """Pair-fitting objective over all ordered pairs plus the theta penalty.

    ``targets`` is the o_ij matrix (1 same / theta sibling / -1 unrelated, or
    raw embedding similarities), so the three category sums collapse into one
    squared-error sum against ``H = codes codes^T / c``.
    """
    codes = np.asarray(codes, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n, c = codes.shape
    if targets.shape != (n, n):
        raise ValueError("targets must be N x N for N code rows")
    h = codes @ codes.T / c
    return float(((h - targets) ** 2).sum() + lam * (theta + 1.0) ** 2)


def _pair_arrays(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2:
        si, sj = pairs
    else:
        arr = np.asarray(pairs, dtype=np.int64)
        if arr.size == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        si, sj = arr[:, 0], arr[:, 1]
    return np.asarray(si, dtype=np.int64), np.asarray(sj, dtype=np.int64)


class _DensePairs:
    """All ordered pairs; residual kept as a dense symmetric matrix."""

    def __init__(self, target_matrix, code_len, include_diagonal, sib_pairs):
        self.residual = code_len * np.asarray(target_matrix, dtype=np.float64)
        self.include_diagonal = include_diagonal
        self.si, self.sj = sib_pairs
        self.sib_dots = np.zeros(self.si.size)
        self.n_sib = self.si.size
        self._refresh()

    def _refresh(self):
        self._diag = np.diag(self.residual).copy()
        self._r2 = float((self.residual**2).sum())

    def spectral_matrix(self, phi):
        m = phi.T @ (self.residual @ phi)
        return (m + m.T) / 2.0

    def smooth_loss(self, t):
        tt = float(t @ t)
        loss = tt * tt - 2.0 * float(t @ (self.residual @ t)) + self._r2
        if not self.include_diagonal:
            t2 = t * t
            loss -= float(
                (t2 * t2).sum()
                - 2.0 * (t2 @ self._diag)
                + (self._diag**2).sum()
            )
        return loss

    def smooth_grad(self, phi, w, t, smoothing):
        dl_dt = 2.0 * (2.0 * t * (t @ t) - 2.0 * (self.residual @ t))
        if not self.include_diagonal:
            dl_dt -= 4.0 * (t * t - self._diag) * t
        return phi.T @ (dl_dt * (smoothing * (1.0 - t * t)))

    def discrete_score(self, b):
        return float(b @ (self.residual @ b))

    def update_residual(self, b):
        self.residual -= np.outer(b, b)
        if self.n_sib:
            self.sib_dots += b[self.si] * b[self.sj]
        self._refresh()

    def sibling_h_sum(self, bits_learned):
        return float(self.sib_dots.sum()) / bits_learned

    def set_sibling_targets(self, theta, code_len):
        self.residual[self.si, self.sj] = code_len * theta - self.sib_dots
        self._refresh()


class _SampledPairs:
    """Seeded per-category subsample of ordered pairs for large N."""

    def __init__(self, ii, jj, targets, sib_mask, code_len, n_items):
        self.ii = ii
        self.jj = jj
        self.residual = code_len * targets
        self.sib_pos = np.nonzero(sib_mask)[0]
        self.sib_dots = np.zeros(self.sib_pos.size)
        self.n_sib = self.sib_pos.size
        self.n_items = n_items
        self.include_diagonal = True  # diagonal handled during sampling

    def _matrix(self):
        return sp.coo_matrix(
            (self.residual, (self.ii, self.jj)),
            shape=(self.n_items, self.n_items),
        ).tocsr()

    def spectral_matrix(self, phi):
        m = phi.T @ (self._matrix() @ phi)
        return (m + m.T) / 2.0

    def smooth_loss(self, t):
        e = t[self.ii] * t[self.jj] - self.residual
        return float(e @ e)

    def smooth_grad(self, phi, w, t, smoothing):
        e = t[self.ii] * t[self.jj] - self.residual
        dl_dt = 2.0 * (
            np.bincount(self.ii, weights=e * t[self.jj], minlength=t.size)
            + np.bincount(self.jj, weights=e * t[self.ii], minlength=t.size)
        )
        return phi.T @ (dl_dt * (smoothing * (1.0 - t * t)))

    def discrete_score(self, b):
        return float(self.residual @ (b[self.ii] * b[self.jj]))

    def update_residual(self, b):
        prod = b[self.ii] * b[self.jj]
        self.residual -= prod
        if self.n_sib:
            self.sib_dots += prod[self.sib_pos]

    def sibling_h_sum(self, bits_learned):
        return float(self.sib_dots.sum()) / bits_learned

    def set_sibling_targets(self, theta, code_len):
        self.residual[self.sib_pos] = code_len * theta - self.sib_dots


def _dedupe_pairs(ii, jj, n_items):
    keys = ii * n_items + jj
    _, keep = np.unique(keys, return_index=True)
    keep.sort()
    return ii[keep], jj[keep]


def _sample_category(rng, members, class_pairs, budget, n_items, drop_diagonal):
    """Uniformly sample ordered item pairs whose class pair is in the list."""
    if len(class_pairs) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    counts = np.array(
        [members[a].size * members[b].size for a, b in class_pairs],
        dtype=np.float64,
    )
    total = counts.sum()
    if total <= budget:
        ii = np.concatenate(
            [np.repeat(members[a], members[b].size) for a, b in class_pairs]
        )
        jj = np.concatenate(
            [np.tile(members[b], members[a].size) for a, b in class_pairs]
        )
    else:
        picks = rng.choice(len(class_pairs), size=budget, p=counts / total)
        ii = np.empty(budget, np.int64)
        jj = np.empty(budget, np.int64)
        for p, (a, b) in enumerate(class_pairs):
            sel = picks == p
            n_sel = int(sel.sum())
            if n_sel:
                ii[sel] = rng.choice(members[a], size=n_sel)
                jj[sel] = rng.choice(members[b], size=n_sel)
        ii, jj = _dedupe_pairs(ii, jj, n_items)
    if drop_diagonal:
        off = ii != jj
        ii, jj = ii[off], jj[off]
    return ii, jj


def _build_sampled(labels, class_targets, sib_classes, spec_mode, cfg):
    n = labels.size
    rng = np.random.default_rng(cfg.seed)
    n_classes = class_targets.shape[0]
    members = [np.nonzero(labels == y)[0] for y in range(n_classes)]

    same_cp = [(y, y) for y in range(n_classes) if members[y].size]
    sib_cp, unrel_cp = [], []
    for a in range(n_classes):
        if not members[a].size:
            continue
        for b in range(n_classes):
            if a == b or not members[b].size:
                continue
            (sib_cp if sib_classes[a, b] else unrel_cp).append((a, b))

    budget = cfg.pairs_per_category
    ii_s, jj_s = _sample_category(
        rng, members, same_cp, budget, n, drop_diagonal=True
    )
    if cfg.include_diagonal:
        diag = np.arange(n, dtype=np.int64)
        ii_s = np.concatenate([diag, ii_s])
        jj_s = np.concatenate([diag, jj_s])
    ii_b, jj_b = _sample_category(rng, members, sib_cp, budget, n, False)
    ii_u, jj_u = _sample_category(rng, members, unrel_cp, budget, n, False)

    ii = np.concatenate([ii_s, ii_b, jj_u * 0 + ii_u])
    jj = np.concatenate([jj_s, jj_b, jj_u])
    sib_mask = np.zeros(ii.size, dtype=bool)
    sib_mask[ii_s.size : ii_s.size + ii_b.size] = True
    targets = class_targets[labels[ii], labels[jj]]
    return _SampledPairs(ii, jj, targets, sib_mask, cfg.code_len, n)


def _refine_bit(system, phi, w0, cfg):
    """Gradient refinement with accept-if-improved backtracking line search."""
    s = cfg.smoothing
    b0 = sign_encode(phi, w0[None, :])[:, 0].astype(np.float64)
    score0 = system.discrete_score(b0)

    w = w0
    t = np.tanh(s * (phi @ w))
    loss = system.smooth_loss(t)
    for _ in range(cfg.grad_steps):
        grad = system.smooth_grad(phi, w, t, s)
        gnorm = np.linalg.norm(grad)
        if gnorm < 1e-12:
            break
        direction = grad / gnorm
        eta = cfg.step_size
        accepted = False
        for _ in range(20):
            w_new = w - eta * direction
            t_new = np.tanh(s * (phi @ w_new))
            loss_new = system.smooth_loss(t_new)
            if loss_new < loss:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        improvement = loss - loss_new
        w, t, loss = w_new, t_new, loss_new
        if improvement < cfg.grad_tol * max(abs(loss), 1.0):
            break

    b = sign_encode(phi, w[None, :])[:, 0].astype(np.float64)
    if system.discrete_score(b) > score0:
        return w, b
    return w0, b0


def _leading_eigvec(matrix):
    _, vecs = np.linalg.eigh(matrix)
    w = vecs[:, -1]
    if w[np.abs(w).argmax()] < 0:
        w = -w
    return w


def train(features, labels, spec, config, ranking=None, table=None):
    """Learn a :class:`HashModel` on mean-centered features.

    ``ranking`` is required for the sibling-aware modes, ``table`` for
    embedding mode. Features must already be column mean-centered (the
    balanced-bit property depends on it).
    """
    phi = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = phi.shape
    if n < 2:
        raise ValueError("need at least 2 training items")
    if labels.shape != (n,):
        raise ValueError("labels must align with feature rows")
    col_mean = np.abs(phi.mean(axis=0)).max()
    if col_mean > _CENTER_TOL:
        raise ValueError(
            f"features are not mean-centered (max |column mean| = {col_mean:.3g})"
        )
    if not isinstance(spec, PairTargetSpec):
        raise TypeError("spec must be a PairTargetSpec")
    if spec.mode in ("fixed_theta", "learned_theta") and ranking is None:
        raise ValueError(f"{spec.mode} mode requires a SiblingRanking")
    if spec.mode == "embedding" and table is None:
        raise ValueError("embedding mode requires an OutputEmbeddingTable")

    n_classes = int(labels.max()) + 1
    if ranking is not None:
        n_classes = max(n_classes, ranking.n_classes)
    theta = spec.theta0 if spec.mode == "learned_theta" else None
    class_targets = class_target_matrix(spec, ranking, table, theta)
    if class_targets.shape[0] < n_classes:
        raise ValueError("ranking/table cover fewer classes than the labels")

    if spec.mode in ("fixed_theta", "learned_theta"):
        sib_classes = sibling_class_matrix(ranking, spec.m)
    else:
        sib_classes = np.zeros_like(class_targets, dtype=bool)

    c = config.code_len
    if n <= config.max_dense_items:
        targets = class_targets[labels][:, labels]
        if spec.mode == "learned_theta":
            sib_items = sib_classes[labels][:, labels]
            sib_pairs = np.nonzero(sib_items)
        else:
            sib_pairs = (np.empty(0, np.int64), np.empty(0, np.int64))
        system = _DensePairs(targets, c, config.include_diagonal, sib_pairs)
        if not config.include_diagonal:
            same_off_diag = (targets == 1.0).sum() - n
            if same_off_diag <= 0:
                raise ValueError(
                    "no same-class pairs with the diagonal excluded"
                )
    else:
        system = _build_sampled(labels, class_targets, sib_classes, spec.mode, config)
    if spec.mode == "learned_theta" and system.n_sib == 0:
        raise ValueError(
            "learned_theta mode needs at least one sibling pair; "
            "none found under the current ranking window"
        )

    projections = np.empty((c, d))
    trajectory = []
    codes = np.empty((n, c), dtype=np.int8)
    for l in range(c):
        w = _leading_eigvec(system.spectral_matrix(phi))
        proj_std = (phi @ w).std()
        if proj_std > 1e-12:
            w = w / proj_std
        w, b = _refine_bit(system, phi, w, config)
        projections[l] = w
        codes[:, l] = b.astype(np.int8)
        system.update_residual(b)
        if spec.mode == "learned_theta":
            h_sum = system.sibling_h_sum(l + 1)
            theta = float(
                np.clip((h_sum - spec.lam) / (system.n_sib + spec.lam), -1.0, 1.0)
            )
            trajectory.append(theta)
            system.set_sibling_targets(theta, c)
        elif spec.mode == "fixed_theta":
            trajectory.append(float(spec.theta))

    return HashModel(
        projection=projections,
        mode=spec.mode,
        lam=spec.lam,
        theta0=float(spec.theta if spec.mode == "fixed_theta" else spec.theta0),
        theta_trajectory=np.asarray(trajectory, dtype=np.float64),
        bit_balance=np.abs(codes.astype(np.float64).mean(axis=0)),
    )

"""Shared low-rank structure across a sample of tensors.

:class:`TuckerDecomposition` estimates orthonormal loadings by HOSVD on the
mode-wise sample covariances followed by HOOI refinement, and maps each
tensor to its projected core. :class:`CPDecomposition` estimates unit-norm
factor matrices by ALS on the sample-stacked tensor, and maps each tensor to
the coefficient vector solving the normal equations with the Hadamard Gram.
Both center with the training mean.
"""
from __future__ import annotations

import string
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_tensor_batch
from .tensor import multi_mode_product, outer_rank1


class RankDeficientError(ValueError):
    """The CP Gram matrix is singular or too ill-conditioned to solve against."""


def fix_signs(a: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    a = np.array(a, dtype=np.float64, copy=True)
    idx = np.argmax(np.abs(a), axis=0)
    signs = np.sign(a[idx, np.arange(a.shape[1])])
    signs[signs == 0] = 1.0
    return a * signs


def mode_covariance(Xc: np.ndarray, mode: int) -> np.ndarray:
    """``sum_i unfold(X_i, mode) unfold(X_i, mode)^T / n`` for a centered batch."""
    axes = [a for a in range(Xc.ndim) if a != mode + 1]
    return np.tensordot(Xc, Xc, axes=(axes, axes)) / Xc.shape[0]


def top_eigenvectors(cov: np.ndarray, k: int, mode: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[k - 1] <= 1e-12 * max(vals[0], 1e-300):
        warnings.warn(
            f"mode-{mode} covariance has numerical rank below {k}; "
            "keeping trailing eigenvectors", RuntimeWarning, stacklevel=3)
    return fix_signs(vecs[:, :k]), vals[:k]


def _subspace_change(a: np.ndarray, b: np.ndarray) -> float:
    # ||sin Theta||_F between the column spaces of two orthonormal bases
    return float(np.linalg.norm(a @ a.T - b @ b.T) / np.sqrt(2.0))


class TuckerDecomposition(TransformerMixin, BaseEstimator):
    """Tucker loadings shared by a sample of tensors.

    Parameters
    ----------
    ranks : sequence of int
        Per-mode ranks; may over-specify the true ranks.
    hooi_iters : int
        Maximum number of HOOI sweeps after the HOSVD initialization.
    tol : float
        Stop when the largest per-mode subspace change falls below this.

    Attributes
    ----------
    loadings_ : list of ndarray
        ``D_m x R_m`` matrices with orthonormal columns.
    mean_ : ndarray
        Training mean tensor used for centering.
    objective_history_ : list of float
        Explained energy ``sum_i ||core_i||_F^2`` after HOSVD and each HOOI sweep.
    """

    def __init__(self, ranks=(4, 4, 4), hooi_iters=50, tol=1e-8):
        self.ranks = ranks
        self.hooi_iters = hooi_iters
        self.tol = tol

    def fit(self, X, y=None):
        X = check_tensor_batch(X)
        n, shape = X.shape[0], X.shape[1:]
        ranks = tuple(int(r) for r in self.ranks)
        if len(ranks) != len(shape):
            raise ValueError(f"{len(ranks)} ranks given for {len(shape)}-mode tensors")
        if n < 2:
            raise ValueError("need at least two samples")
        for r, d in zip(ranks, shape):
            if not 1 <= r <= d:
                raise ValueError(f"rank {r} exceeds mode dimension {d}")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_

        loadings = [top_eigenvectors(mode_covariance(Xc, m), r, m)[0] for m, r in enumerate(ranks)]
        history = [self._energy(Xc, loadings)]
        n_iter = 0
        for n_iter in range(1, self.hooi_iters + 1):
            change = 0.0
            for m, r in enumerate(ranks):
                others = [None if k == m else a for k, a in enumerate(loadings)]
                Z = multi_mode_product(Xc, others, transpose=True, offset=1)
                new, vals = top_eigenvectors(mode_covariance(Z, m), r, m)
                change = max(change, _subspace_change(loadings[m], new))
                loadings[m] = new
            history.append(float(n * vals.sum()))
            if change < self.tol:
                break
        self.loadings_ = loadings
        self.ranks_ = ranks
        self.objective_history_ = history
        self.n_iter_ = n_iter
        return self

    @staticmethod
    def _energy(Xc, loadings):
        return float(np.sum(multi_mode_product(Xc, loadings, transpose=True, offset=1) ** 2))

    def transform(self, X):
        """Project each tensor: ``(X_i - mean) x_m A_m^T`` for all modes."""
        check_is_fitted(self, "loadings_")
        X = check_tensor_batch(X, self.mean_.shape)
        return multi_mode_product(X - self.mean_, self.loadings_, transpose=True, offset=1)

    def project(self, x):
        """Core of a single tensor."""
        return self.transform(np.asarray(x)[None])[0]

    def inverse_transform(self, cores):
        check_is_fitted(self, "loadings_")
        cores = np.asarray(cores, dtype=np.float64)
        return multi_mode_product(cores, self.loadings_, offset=1) + self.mean_

    @property
    def core_shape_(self):
        return tuple(a.shape[1] for a in self.loadings_)

    def alignment(self, true_loadings):
        """``sigma_min(A_hat_m^T A_m)`` per mode against known loadings."""
        check_is_fitted(self, "loadings_")
        return [float(np.linalg.svd(a.T @ b, compute_uv=False).min())
                for a, b in zip(self.loadings_, true_loadings)]

    def to_dict(self):
        check_is_fitted(self, "loadings_")
        return {
            "structure": "tucker",
            "params": {"ranks": list(self.ranks_), "hooi_iters": self.hooi_iters, "tol": self.tol},
            "shape": list(self.mean_.shape),
            "loadings": [a.ravel().tolist() for a in self.loadings_],
            "mean": self.mean_.ravel().tolist(),
            "objective_history": self.objective_history_,
        }

    @classmethod
    def from_dict(cls, d):
        p = d["params"]
        self = cls(ranks=tuple(p["ranks"]), hooi_iters=p["hooi_iters"], tol=p["tol"])
        shape = tuple(d["shape"])
        self.ranks_ = tuple(p["ranks"])
        self.loadings_ = [np.array(a, dtype=np.float64).reshape(dm, r)
                          for a, dm, r in zip(d["loadings"], shape, self.ranks_)]
        self.mean_ = np.array(d["mean"], dtype=np.float64).reshape(shape)
        self.objective_history_ = d.get("objective_history", [])
        self.n_iter_ = max(len(self.objective_history_) - 1, 0)
        return self


def cp_gram(factors) -> np.ndarray:
    """Hadamard product of ``A_m^T A_m`` over modes."""
    g = np.ones((factors[0].shape[1],) * 2)
    for a in factors:
        g = g * (a.T @ a)
    return g


def check_gram(gram: np.ndarray, max_cond: float = 1e12) -> None:
    vals = np.linalg.eigvalsh((gram + gram.T) / 2)
    if vals[0] <= 0 or vals[-1] / vals[0] > max_cond:
        cond = np.inf if vals[0] <= 0 else vals[-1] / vals[0]
        raise RankDeficientError(
            f"CP Gram matrix is singular or ill-conditioned (condition number {cond:.3g}); "
            "refit with a lower rank")


def _letters(k):
    return string.ascii_lowercase[:k]


class CPDecomposition(TransformerMixin, BaseEstimator):
    """CP factors shared by a sample of tensors.

    ALS runs on the ``(n, D_1, ..., D_M)`` stacked tensor with the sample
    factor unconstrained; the mode factors start from the leading eigenvectors
    of the mode-wise sample covariances and are renormalized to unit columns
    after every sweep. With ``compress=True`` the stacked tensor is first
    projected onto those leading ``min(R, D_m)`` eigenvectors per mode and the
    factors are kept inside that subspace, which cuts the sweep cost by the
    compression ratio.

    Attributes
    ----------
    factors_ : list of ndarray
        ``D_m x R`` factor matrices with unit-norm columns.
    gram_ : ndarray
        ``R x R`` Hadamard Gram used to solve for coefficients.
    fit_history_ : list of float
        Relative residual ``||T - model||^2 / ||T||^2`` after each sweep.
    """

    def __init__(self, rank=16, als_iters=200, tol=1e-8, compress=True, random_state=None):
        self.rank = rank
        self.als_iters = als_iters
        self.tol = tol
        self.compress = compress
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_tensor_batch(X)
        n, shape = X.shape[0], X.shape[1:]
        R = int(self.rank)
        if n < 2:
            raise ValueError("need at least two samples")
        if R < 1:
            raise ValueError("rank must be positive")
        rng = np.random.default_rng(self.random_state)
        self.mean_ = X.mean(axis=0)
        T = X - self.mean_
        del X

        # leading mode-covariance eigenvectors: ALS initialization and, when
        # compressing, the subspaces the factors are restricted to
        bases = []
        for m, d in enumerate(shape):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                a, _ = top_eigenvectors(mode_covariance(T, m), min(R, d), m)
            bases.append(a)

        norm_sq = float(np.sum(T * T))
        if self.compress:
            T = multi_mode_product(T, bases, transpose=True, offset=1)
            factors = [np.eye(b.shape[1], R) for b in bases]
        else:
            factors = [b.copy() for b in bases]
        for m, a in enumerate(factors):
            k = min(R, a.shape[0])
            if k < R:
                extra = rng.standard_normal((a.shape[0], R - k))
                factors[m][:, k:] = extra / np.linalg.norm(extra, axis=0)
        # energy outside the compressed subspaces is a constant residual offset
        offset = norm_sq - float(np.sum(T * T))

        factors, self.sample_factor_, history = self._als(T, factors, norm_sq, offset)
        if self.compress:
            factors = [b @ a for b, a in zip(bases, factors)]
        self.factors_, self.fit_history_ = factors, history
        self.n_iter_ = len(self.fit_history_)
        self.factors_ = [fix_signs(a) for a in self.factors_]
        self.gram_ = cp_gram(self.factors_)
        check_gram(self.gram_)
        self.rank_ = R
        return self

    def _als(self, T, factors, norm_sq, offset):
        M = len(factors)
        n = T.shape[0]
        R = factors[0].shape[1]
        modes = _letters(M)
        last = T.shape[-1]
        # T contracted with the last factor, reused for all but the last update
        history = []
        B = np.zeros((n, R))
        prev = np.inf
        for _ in range(self.als_iters):
            P = (T.reshape(-1, last) @ factors[-1]).reshape(T.shape[:-1] + (R,))
            # sample factor
            B = self._solve(self._mttkrp(P, factors[:-1], None, modes[:-1]), factors)
            # leading modes
            for m in range(M - 1):
                others = [B] + [a for k, a in enumerate(factors) if k != m]
                mk = self._mttkrp(P, factors[:-1], m, modes[:-1], B)
                factors[m] = self._solve(mk, others)
            # last mode from T contracted with the sample factor
            Q = (B.T @ T.reshape(n, -1)).reshape((R,) + T.shape[1:])
            sub = ",".join(["r" + modes] + [f"{c}r" for c in modes[:-1]]) + f"->{modes[-1]}r"
            mk = np.einsum(sub, Q, *factors[:-1], optimize=True)
            factors[-1] = self._solve(mk, [B] + factors[:-1])

            inner = float(np.sum(mk * factors[-1]))
            model_sq = float(np.sum(cp_gram([B] + factors)))
            res = max(norm_sq - 2 * inner + model_sq, 0.0) / max(norm_sq, 1e-300)

            norms = np.ones(R)
            for m in range(M):
                cn = np.linalg.norm(factors[m], axis=0)
                cn[cn == 0] = 1.0
                factors[m] = factors[m] / cn
                norms *= cn
            B = B * norms
            history.append(res)
            if abs(prev - res) < self.tol:
                break
            prev = res
        return factors, B, history

    @staticmethod
    def _mttkrp(P, lead, skip, modes, B=None):
        # P has axes (n, lead modes..., r); contract all lead modes except `skip`
        ops, subs = [P], ["n" + modes + "r"]
        for k, a in enumerate(lead):
            if k != skip:
                ops.append(a)
                subs.append(modes[k] + "r")
        if skip is None:
            out = "nr"
        else:
            ops.append(B)
            subs.append("nr")
            out = modes[skip] + "r"
        return np.einsum(",".join(subs) + "->" + out, *ops, optimize=True)

    @staticmethod
    def _solve(mttkrp, others):
        v = cp_gram(others)
        try:
            return np.linalg.solve(v, mttkrp.T).T
        except np.linalg.LinAlgError:
            return mttkrp @ np.linalg.pinv(v)

    def moments(self, X):
        """``m_i(r) = <X_i - mean, a_1r ∘ ... ∘ a_Mr>`` for every sample."""
        check_is_fitted(self, "factors_")
        X = check_tensor_batch(X, self.mean_.shape)
        M = len(self.factors_)
        modes = _letters(M)
        sub = "n" + modes + "," + ",".join(f"{c}z" for c in modes) + "->nz"
        return np.einsum(sub, X - self.mean_, *self.factors_, optimize=True)

    def transform(self, X):
        """Coefficient vectors solving ``G c_i = m_i``, shape ``(n, R)``."""
        m = self.moments(X)
        try:
            return np.linalg.solve(self.gram_, m.T).T
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError(f"CP coefficient solve failed: {exc}") from exc

    def project(self, x):
        return self.transform(np.asarray(x)[None])[0]

    def inverse_transform(self, coefs):
        check_is_fitted(self, "factors_")
        coefs = np.atleast_2d(np.asarray(coefs, dtype=np.float64))
        M = len(self.factors_)
        modes = _letters(M)
        sub = "nz," + ",".join(f"{c}z" for c in modes) + "->n" + modes
        return np.einsum(sub, coefs, *self.factors_, optimize=True) + self.mean_

    def basis_tensor(self, r):
        return outer_rank1([a[:, r] for a in self.factors_])

    @property
    def core_shape_(self):
        return (self.factors_[0].shape[1],)

    def to_dict(self):
        check_is_fitted(self, "factors_")
        return {
            "structure": "cp",
            "params": {"rank": self.rank_, "als_iters": self.als_iters, "tol": self.tol,
                       "compress": self.compress, "random_state": self.random_state},
            "shape": list(self.mean_.shape),
            "factors": [a.ravel().tolist() for a in self.factors_],
            "mean": self.mean_.ravel().tolist(),
            "fit_history": self.fit_history_,
        }

    @classmethod
    def from_dict(cls, d):
        p = d["params"]
        self = cls(rank=p["rank"], als_iters=p["als_iters"], tol=p["tol"],
                   compress=p.get("compress", True), random_state=p.get("random_state"))
        shape = tuple(d["shape"])
        self.rank_ = p["rank"]
        self.factors_ = [np.array(a, dtype=np.float64).reshape(dm, self.rank_)
                         for a, dm in zip(d["factors"], shape)]
        self.mean_ = np.array(d["mean"], dtype=np.float64).reshape(shape)
        self.gram_ = cp_gram(self.factors_)
        self.fit_history_ = d.get("fit_history", [])
        self.n_iter_ = len(self.fit_history_)
        return self


def embed_superdiag(c, n_modes: int) -> np.ndarray:
    """``R x ... x R`` tensor with ``c_r`` at ``(r, ..., r)``."""
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.size < 1 or n_modes < 1:
        raise ValueError("need a nonempty coefficient vector and at least one mode")
    out = np.zeros((c.size,) * n_modes)
    idx = np.arange(c.size)
    out[(idx,) * n_modes] = c
    return out


def decomposition_from_dict(d):
    if d["structure"] == "tucker":
        return TuckerDecomposition.from_dict(d)
    if d["structure"] == "cp":
        return CPDecomposition.from_dict(d)
    raise ValueError(f"unknown structure {d['structure']!r}")

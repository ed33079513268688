"""Local class-conditional conformal intervals and ROC/AUC confidence bands.

Points live in the fitted model's latent space (core plus refinement), with
distance ``||C_a - C_b||_F + omega * ||U_a - U_b||_F``. Calibration scores
are the gap between a KNN smoothing of the predicted probabilities over the
training split and the prediction itself; per test point they are quantiled
over a local, class-filtered calibration neighborhood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator


class InsufficientCalibrationError(ValueError):
    """No calibration scores available for a class."""


@dataclass
class LatentSet:
    """Latent representation of a split: cores, refinements, predictions and labels."""

    core: np.ndarray
    refinement: np.ndarray
    prob: np.ndarray
    label: np.ndarray | None = None

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=np.float64)
        self.refinement = np.asarray(self.refinement, dtype=np.float64)
        self.prob = np.asarray(self.prob, dtype=np.float64).ravel()
        n = self.core.shape[0]
        if self.refinement.shape[0] != n or self.prob.shape[0] != n:
            raise ValueError("core, refinement and prob must have the same length")
        if self.label is not None:
            self.label = np.asarray(self.label).ravel().astype(np.int64)
            if self.label.shape[0] != n:
                raise ValueError("label length mismatch")

    def __len__(self):
        return self.core.shape[0]

    def take(self, idx):
        return LatentSet(self.core[idx], self.refinement[idx], self.prob[idx],
                         None if self.label is None else self.label[idx])


def cr_distance(core_a, ref_a, core_b, ref_b, omega=10.0) -> float:
    """Core-refinement distance between two single points."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    core_a, core_b = np.asarray(core_a, float), np.asarray(core_b, float)
    ref_a, ref_b = np.asarray(ref_a, float), np.asarray(ref_b, float)
    if core_a.shape != core_b.shape or ref_a.shape != ref_b.shape:
        raise ValueError("latent shapes do not match")
    return float(np.linalg.norm(core_a - core_b) + omega * np.linalg.norm(ref_a - ref_b))


def cr_distances(a: LatentSet, b: LatentSet, omega=10.0) -> np.ndarray:
    """Pairwise distance matrix, shape ``(len(a), len(b))``."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    if a.core.shape[1:] != b.core.shape[1:] or a.refinement.shape[1:] != b.refinement.shape[1:]:
        raise ValueError("latent shapes do not match")
    dc = cdist(a.core.reshape(len(a), -1), b.core.reshape(len(b), -1))
    du = cdist(a.refinement.reshape(len(a), -1), b.refinement.reshape(len(b), -1))
    return dc + omega * du


def nearest(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest entries per row; ties go to the lower index."""
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def knn_smoother(train: LatentSet, query: LatentSet, k=50, omega=10.0) -> np.ndarray:
    """Mean training prediction over the ``k`` nearest training points of each query."""
    if len(train) == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= len(train):
        raise ValueError(f"k={k} must lie in [1, {len(train)}]")
    idx = nearest(cr_distances(query, train, omega), k)
    return train.prob[idx].mean(axis=1)


def conformity_scores(smoothed, prob) -> np.ndarray:
    return np.asarray(smoothed, dtype=np.float64) - np.asarray(prob, dtype=np.float64)


def class_quantile(scores, gamma, inflated=False) -> float:
    """Empirical ``gamma``-quantile as the ``ceil(gamma * n)``-th order statistic.

    With ``inflated=True`` the level is raised to ``gamma * (n + 1) / n``
    (split-conformal finite-sample correction) before indexing.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = s.size
    if n == 0:
        raise InsufficientCalibrationError("no calibration scores for this class")
    if inflated:
        gamma = gamma * (n + 1) / n
    if gamma <= 0:
        return float(s[0])
    if gamma >= 1:
        return float(s[-1])
    k = math.ceil(gamma * n - 1e-12)
    return float(s[min(max(k, 1), n) - 1])


def prob_interval(prob, scores, alpha, inflated=False):
    """``[prob + q_{alpha/2}, prob + q_{1-alpha/2}]`` clipped to ``[0, 1]``."""
    lo = prob + class_quantile(scores, alpha / 2, inflated)
    hi = prob + class_quantile(scores, 1 - alpha / 2, inflated)
    return float(np.clip(lo, 0.0, 1.0)), float(np.clip(hi, 0.0, 1.0))


def uniform_grid(n_grid=200, low=0.0, high=1.0):
    return np.linspace(low, high, n_grid)


@dataclass
class RocBand:
    """Point ROC curves and pointwise band limits over a threshold grid."""

    thresholds: np.ndarray
    sens: np.ndarray
    sens_lo: np.ndarray
    sens_hi: np.ndarray
    spec: np.ndarray
    spec_lo: np.ndarray
    spec_hi: np.ndarray
    alpha: float

    COLUMNS = ("lambda", "sens", "sens_lo", "sens_hi", "spec", "spec_lo", "spec_hi")

    def table(self):
        return np.column_stack([self.thresholds, self.sens, self.sens_lo, self.sens_hi,
                                self.spec, self.spec_lo, self.spec_hi])

    def contains(self, other: "RocBand", atol=0.0) -> bool:
        """Pointwise containment of ``other``'s limits in this band."""
        return bool(np.all(self.sens_lo <= other.sens_lo + atol)
                    and np.all(self.sens_hi >= other.sens_hi - atol)
                    and np.all(self.spec_lo <= other.spec_lo + atol)
                    and np.all(self.spec_hi >= other.spec_hi - atol))


@dataclass
class AucInterval:
    kind: str
    point: float
    lower: float
    upper: float

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self):
        return {"kind": self.kind, "point": self.point, "lower": self.lower, "upper": self.upper}


def _check_classes(labels):
    labels = np.asarray(labels).ravel()
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValueError("the evaluation split must contain both classes")
    return labels


def roc_curves(score, labels, thresholds):
    """Point ``Sens(l) = mean_{y=1} 1(score > l)`` and ``Spec(l) = mean_{y=0} 1(score <= l)``."""
    labels = _check_classes(labels)
    score = np.asarray(score, dtype=np.float64).ravel()
    t = np.asarray(thresholds, dtype=np.float64)
    pos, neg = score[labels == 1], score[labels == 0]
    sens = (pos[None, :] > t[:, None]).mean(axis=1)
    spec = (neg[None, :] <= t[:, None]).mean(axis=1)
    return sens, spec


def roc_bands(score, labels, lower, upper, thresholds, alpha) -> RocBand:
    """Band limits from each test point's interval for its own class.

    ``lower`` and ``upper`` are per-point interval endpoints (already selected
    for the point's label).
    """
    labels = _check_classes(labels)
    t = np.asarray(thresholds, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64).ravel()
    upper = np.asarray(upper, dtype=np.float64).ravel()
    sens, spec = roc_curves(score, labels, t)
    p, q = labels == 1, labels == 0
    sens_lo = (lower[p][None, :] > t[:, None]).mean(axis=1)
    sens_hi = (upper[p][None, :] > t[:, None]).mean(axis=1)
    spec_lo = (upper[q][None, :] <= t[:, None]).mean(axis=1)
    spec_hi = (lower[q][None, :] <= t[:, None]).mean(axis=1)
    return RocBand(t, sens, sens_lo, sens_hi, spec, spec_lo, spec_hi, float(alpha))


def _heights(curve, ties, left):
    if ties == "left":
        return curve[:-1] if left else curve[1:]
    if ties == "half":
        return 0.5 * (curve[:-1] + curve[1:])
    raise ValueError(f"ties must be 'left' or 'half', got {ties!r}")


def sens_step_sum(sens_like, spec, ties="left"):
    """``sum_{g>=2} S(l_{g-1}) [Spec(l_g) - Spec(l_{g-1})]``.

    With ``ties="half"`` the height is the mean of ``S`` at both ends of the
    step, so a jump shared by both coordinates (an atom of the score
    between two thresholds) earns half credit instead of full.
    """
    sens_like, spec = np.asarray(sens_like), np.asarray(spec)
    return float(np.sum(_heights(sens_like, ties, True) * np.diff(spec)))


def spec_step_sum(spec_like, sens, ties="left"):
    """``sum_{g>=2} Spec(l_g) [Sens(l_{g-1}) - Sens(l_g)]``; ``ties`` as in :func:`sens_step_sum`."""
    spec_like, sens = np.asarray(spec_like), np.asarray(sens)
    return float(np.sum(_heights(spec_like, ties, False) * -np.diff(sens)))


def auc_intervals(band: RocBand):
    """Sensitivity- and specificity-form AUC intervals by grid step sums."""
    sens_iv = AucInterval("sens", sens_step_sum(band.sens, band.spec),
                          sens_step_sum(band.sens_lo, band.spec),
                          sens_step_sum(band.sens_hi, band.spec))
    spec_iv = AucInterval("spec", spec_step_sum(band.spec, band.sens),
                          spec_step_sum(band.spec_lo, band.sens),
                          spec_step_sum(band.spec_hi, band.sens))
    return sens_iv, spec_iv


def point_auc(score, labels, thresholds):
    """Step-sum AUC of a score (sensitivity form) on a grid."""
    sens, spec = roc_curves(score, labels, thresholds)
    return sens_step_sum(sens, spec)


class ConformalROC(BaseEstimator):
    """Structure-aware conformal probability intervals and ROC bands.

    Parameters
    ----------
    k_train : int
        Neighbors of the KNN probability smoother over the training split.
    k_cal : int
        Size of the local calibration neighborhood before class filtering.
    omega : float
        Weight of the refinement part of the latent distance.
    alpha : float
        Miscoverage level.
    n_grid : int
        Number of uniform thresholds on ``[0, 1]``.
    inflated : bool
        Use the ``(n + 1) / n`` quantile correction.
    """

    def __init__(self, k_train=50, k_cal=10, omega=10.0, alpha=0.1, n_grid=200, inflated=False):
        self.k_train = k_train
        self.k_cal = k_cal
        self.omega = omega
        self.alpha = alpha
        self.n_grid = n_grid
        self.inflated = inflated

    def _validate(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.k_train < 1 or self.k_cal < 1 or self.n_grid < 2:
            raise ValueError("k_train, k_cal must be >= 1 and n_grid >= 2")
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    def fit(self, train: LatentSet, calibration: LatentSet, smoothed=None):
        """Score the calibration split; ``smoothed`` overrides the KNN smoother."""
        self._validate()
        if calibration.label is None:
            raise ValueError("calibration split needs labels")
        self.calibration_ = calibration
        if smoothed is None:
            smoothed = knn_smoother(train, calibration, min(self.k_train, len(train)), self.omega)
        self.smoothed_ = np.asarray(smoothed, dtype=np.float64)
        self.scores_ = conformity_scores(self.smoothed_, calibration.prob)
        return self

    def local_sets(self, test: LatentSet):
        """Per test point and class: calibration indices of the local class-filtered set."""
        cal = self.calibration_
        k = min(self.k_cal, len(cal))
        d = cr_distances(test, cal, self.omega)
        local = nearest(d, k)
        order = np.argsort(d, axis=1, kind="stable")
        out = []
        for j in range(len(test)):
            per_class = {}
            for c in (0, 1):
                idx = local[j][cal.label[local[j]] == c]
                if idx.size == 0:
                    same = order[j][cal.label[order[j]] == c]
                    idx = same[:k]
                per_class[c] = idx
            out.append(per_class)
        return out

    def intervals(self, test: LatentSet, alpha=None):
        """Clipped intervals for both classes, arrays of shape ``(n, 2)`` (lower, upper)."""
        alpha = self.alpha if alpha is None else alpha
        lower = np.empty((len(test), 2))
        upper = np.empty((len(test), 2))
        for j, sets in enumerate(self.local_sets(test)):
            for c in (0, 1):
                lower[j, c], upper[j, c] = prob_interval(test.prob[j], self.scores_[sets[c]],
                                                         alpha, self.inflated)
        return lower, upper

    def band(self, test: LatentSet, alpha=None, thresholds=None, intervals=None):
        if test.label is None:
            raise ValueError("test split needs labels")
        alpha = self.alpha if alpha is None else alpha
        t = uniform_grid(self.n_grid) if thresholds is None else np.asarray(thresholds, float)
        lower, upper = self.intervals(test, alpha) if intervals is None else intervals
        rows = np.arange(len(test))
        return roc_bands(test.prob, test.label, lower[rows, test.label], upper[rows, test.label],
                         t, alpha)

    def auc(self, test: LatentSet, alpha=None):
        return auc_intervals(self.band(test, alpha))

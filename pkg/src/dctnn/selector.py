"""Conformal structure selection from the difference of two models' scores.

``d(X) = pi_A(X) - pi_B(X)`` is treated as a score for the label: when model
A is the better one its ROC lies above the diagonal. Per test point, an
interval for ``d`` is read off the ``d`` values of its nearest same-class
calibration points; counting interval endpoints gives difference-ROC bands
and difference-AUC sets, which are compared to 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import (LatentSet, RocBand, _check_classes, class_quantile, cr_distances,
                        roc_bands, sens_step_sum, spec_step_sum)

MODEL_A, MODEL_B, TIE, CONFLICT = "ModelA", "ModelB", "Tie", "Conflict"


def difference_scores(prob_a, prob_b) -> np.ndarray:
    prob_a = np.asarray(prob_a, dtype=np.float64).ravel()
    prob_b = np.asarray(prob_b, dtype=np.float64).ravel()
    if prob_a.shape != prob_b.shape:
        raise ValueError("the two models were scored on different splits")
    return prob_a - prob_b


def difference_grid(n_grid=200):
    """``l_g = -1 + 2 g / G`` for ``g = 1..G``: uniform on ``(-1, 1]``."""
    return -1.0 + 2.0 * np.arange(1, n_grid + 1) / n_grid


def neighborhoods(test: LatentSet, calibration: LatentSet, k=8, omega=10.0):
    """For each test point, its ``k`` nearest calibration points sharing its label."""
    if test.label is None or calibration.label is None:
        raise ValueError("both splits need labels")
    d = cr_distances(test, calibration, omega)
    order = np.argsort(d, axis=1, kind="stable")
    out = []
    for j in range(len(test)):
        same = order[j][calibration.label[order[j]] == test.label[j]]
        if same.size == 0:
            raise ValueError(f"calibration split has no points of class {test.label[j]}")
        out.append(same[:k])
    return out


def diff_intervals(test: LatentSet, calibration: LatentSet, d_cal, k=8, omega=10.0, alpha=0.1,
                   inflated=False):
    """``[q_{alpha/2}, q_{1-alpha/2}]`` of neighbor differences; arrays ``(lower, upper)``."""
    d_cal = np.asarray(d_cal, dtype=np.float64).ravel()
    if d_cal.shape[0] != len(calibration):
        raise ValueError("one difference score per calibration point is required")
    nb = neighborhoods(test, calibration, k, omega)
    lower = np.array([class_quantile(d_cal[i], alpha / 2, inflated) for i in nb])
    upper = np.array([class_quantile(d_cal[i], 1 - alpha / 2, inflated) for i in nb])
    return lower, upper


def diff_roc_bands(d_test, labels, lower, upper, alpha, n_grid=200) -> RocBand:
    return roc_bands(d_test, labels, lower, upper, difference_grid(n_grid), alpha)


def diff_auc_sets(band: RocBand, ties="half"):
    """``(point, lower, upper)`` for the sensitivity and specificity forms.

    Difference scores have an atom at 0 wherever the two models agree, so
    shared jumps get half credit by default; identical models then give 0.5.
    """
    sens = tuple(sens_step_sum(s, band.spec, ties) for s in (band.sens, band.sens_lo, band.sens_hi))
    spec = tuple(spec_step_sum(s, band.sens, ties) for s in (band.spec, band.spec_lo, band.spec_hi))
    return sens, spec


def contingency(d_test, labels, thresholds):
    """Counts ``n11, n12, n21, n22`` per threshold (rows y=1/y=0, columns d > l / d <= l)."""
    labels = _check_classes(labels)
    d = np.asarray(d_test, dtype=np.float64).ravel()
    t = np.asarray(thresholds)[:, None]
    above = d[None, :] > t
    pos = labels == 1
    n11 = np.sum(above & pos, axis=1)
    n21 = np.sum(above & ~pos, axis=1)
    return np.column_stack([n11, pos.sum() - n11, n21, (~pos).sum() - n21])


def decide(interval) -> str:
    """ModelA if the lower end exceeds 0.5, ModelB if the upper end is below 0.5, else Tie."""
    lo, hi = interval[-2], interval[-1]
    if lo > 0.5:
        return MODEL_A
    if hi < 0.5:
        return MODEL_B
    return TIE


def combine(verdict_sens, verdict_spec) -> str:
    """One direction's call: agreement wins, a tie defers to the other, contradiction is a tie."""
    if verdict_sens == verdict_spec:
        return verdict_sens
    if verdict_sens == TIE:
        return verdict_spec
    if verdict_spec == TIE:
        return verdict_sens
    return TIE


def reconcile(first, second) -> str:
    """Final call from two directions, each already expressed as ModelA/ModelB/Tie."""
    if first == second:
        return first
    if first == TIE:
        return second
    if second == TIE:
        return first
    return CONFLICT


def _flip(verdict):
    return {MODEL_A: MODEL_B, MODEL_B: MODEL_A}.get(verdict, verdict)


@dataclass
class DirectionResult:
    direction: str
    band: RocBand
    auc_sens: tuple
    auc_spec: tuple
    verdict_sens: str
    verdict_spec: str
    final: str
    counts: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {"direction": self.direction,
                "auc_sens": [self.auc_sens[1], self.auc_sens[2]],
                "auc_sens_point": self.auc_sens[0],
                "auc_spec": [self.auc_spec[1], self.auc_spec[2]],
                "auc_spec_point": self.auc_spec[0],
                "verdict_sens": self.verdict_sens, "verdict_spec": self.verdict_spec,
                "final": self.final}


def run_direction(d_test, d_cal, test_latent: LatentSet, cal_latent: LatentSet, k=8,
                  omega=10.0, alpha=0.1, n_grid=200, name="A-B", inflated=False):
    """Band, AUC sets and verdicts for one difference score in one latent space."""
    test = LatentSet(test_latent.core, test_latent.refinement, d_test, test_latent.label)
    lower, upper = diff_intervals(test, cal_latent, d_cal, k, omega, alpha, inflated)
    band = diff_roc_bands(d_test, test.label, lower, upper, alpha, n_grid)
    sens, spec = diff_auc_sets(band)
    vs, vp = decide(sens), decide(spec)
    return DirectionResult(name, band, sens, spec, vs, vp, combine(vs, vp),
                           contingency(d_test, test.label, band.thresholds))


@dataclass
class SelectionResult:
    forward: DirectionResult
    reverse: DirectionResult
    final: str

    def to_dict(self, names=("A", "B")):
        label = {MODEL_A: names[0], MODEL_B: names[1], TIE: TIE, CONFLICT: CONFLICT}
        fwd, rev = self.forward.to_dict(), self.reverse.to_dict()
        rev["final_in_forward_terms"] = _flip(self.reverse.final)
        return {"directions": [fwd, rev], "final": self.final, "final_model": label[self.final]}


def select_structure(prob_a_test, prob_b_test, prob_a_cal, prob_b_cal, latent_a_test,
                     latent_a_cal, latent_b_test, latent_b_cal, k=8, omega=10.0, alpha=0.1,
                     n_grid=200, inflated=False) -> SelectionResult:
    """Two-direction test: ``A - B`` in A's latent space, then ``B - A`` in B's.

    The reverse direction's verdicts are in its own terms (ModelA = B); the
    final decision is expressed in forward terms.
    """
    d_test = difference_scores(prob_a_test, prob_b_test)
    d_cal = difference_scores(prob_a_cal, prob_b_cal)
    fwd = run_direction(d_test, d_cal, latent_a_test, latent_a_cal, k, omega, alpha, n_grid,
                        "A-B", inflated)
    rev = run_direction(-d_test, -d_cal, latent_b_test, latent_b_cal, k, omega, alpha, n_grid,
                        "B-A", inflated)
    return SelectionResult(fwd, rev, reconcile(fwd.final, _flip(rev.final)))

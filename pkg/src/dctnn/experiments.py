"""End-to-end runs on simulated data: fitting, uncertainty bands, selection, coverage."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .conformal import ConformalROC, LatentSet, auc_intervals, roc_curves, sens_step_sum, \
    spec_step_sum, uniform_grid
from .network import DCTNNClassifier, TrainConfig
from .selector import select_structure
from .simgen import SimConfig, gen_dataset


def latent_set(model: DCTNNClassifier, X, y=None, chunk=256) -> LatentSet:
    """Cores, selector outputs and predicted probabilities of a fitted classifier."""
    cores, refs, probs = [], [], []
    for s in range(0, X.shape[0], chunk):
        c, u = model.latent(X[s:s + chunk])
        cores.append(c)
        refs.append(u)
        probs.append(model.net_.forward(c, refinement=u).output)
    return LatentSet(np.concatenate(cores), np.concatenate(refs), np.concatenate(probs), y)


def split_latents(model, ds):
    return {name: latent_set(model, ds.X[idx], ds.y[idx]) for name, idx in ds.splits.items()}


def fit_metrics(model, ds, latents=None):
    """Accuracy, MSE against the oracle probability, class-conditional mean predictions."""
    latents = latents or split_latents(model, ds)
    out = {}
    for name, lat in latents.items():
        idx = ds.splits[name]
        p = lat.prob
        out[f"{name}_accuracy"] = float(np.mean((p > 0.5) == lat.label))
        if ds.has_oracle:
            out[f"{name}_mse"] = float(np.mean((p - ds.pi[idx]) ** 2))
        for k in (0, 1):
            sel = lat.label == k
            out[f"{name}_prob_mean_y{k}"] = float(p[sel].mean())
            out[f"{name}_prob_std_y{k}"] = float(p[sel].std(ddof=1)) if sel.sum() > 1 else 0.0
    return out


def fit_classifier(ds, structure, **params):
    Xtr, ytr = ds.subset("train")
    return DCTNNClassifier(structure=structure, **params).fit(Xtr, ytr)


def uq(latents, k_train=50, k_cal=10, omega=10.0, alpha=0.1, n_grid=200, smoothed=None,
       inflated=False):
    """Band and AUC intervals on the test split."""
    conf = ConformalROC(k_train, k_cal, omega, alpha, n_grid, inflated)
    conf.fit(latents["train"], latents["calibration"], smoothed=smoothed)
    band = conf.band(latents["test"])
    return conf, band, auc_intervals(band)


def selection(model_a, model_b, latents_a, latents_b, k=8, omega=10.0, alpha=0.1, n_grid=200):
    return select_structure(latents_a["test"].prob, latents_b["test"].prob,
                            latents_a["calibration"].prob, latents_b["calibration"].prob,
                            latents_a["test"], latents_a["calibration"],
                            latents_b["test"], latents_b["calibration"], k, omega, alpha, n_grid)


@dataclass
class CoverageReport:
    alpha: float
    reps: int
    records: list = field(default_factory=list)
    seconds: float = field(default=0.0, compare=False)

    def rate(self, key):
        v = np.array([r[key] for r in self.records], dtype=float)
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0

    def summary(self):
        keys = ("sens_covered", "spec_covered", "auc_sens_covered", "auc_spec_covered",
                "nested")
        out = {"alpha": self.alpha, "reps": self.reps}
        for k in keys:
            m, se = self.rate(k)
            out[k] = {"rate": m, "mc_se": se}
        return out

    def to_dict(self):
        return {"summary": self.summary(), "replications": self.records}


def oracle_auc(pi, labels, thresholds):
    sens, spec = roc_curves(pi, labels, thresholds)
    return sens_step_sum(sens, spec), spec_step_sum(spec, sens)


def coverage_experiment(reps=20, alpha=0.1, regime="tucker", structure="tucker", n=600, seed=0,
                        nested_alphas=(0.05, 0.25), oracle_fed=False, sim_overrides=None,
                        conformal_params=None, **fit_params):
    """Monte Carlo coverage of oracle Sens/Spec at a random threshold and of the oracle AUC.

    With ``oracle_fed=True`` both the smoothed and predicted probabilities
    are replaced by the true probability.
    """
    conformal_params = conformal_params or {}
    if "epochs" not in fit_params:
        # keep the optimizer step count of the full-size setting
        n_train = int(round(SimConfig().split[0] * n))
        fit_params["epochs"] = int(np.ceil(TrainConfig.epochs * 1200 / n_train))
    report = CoverageReport(alpha, reps)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    grid = uniform_grid(conformal_params.get("n_grid", 200))
    for r in range(reps):
        t0 = time.perf_counter()
        cfg = SimConfig(regime=regime, n=n, seed=seed + r, **(sim_overrides or {}))
        ds = gen_dataset(cfg)
        model = fit_classifier(ds, structure, random_state=seed + r, **fit_params)
        latents = split_latents(model, ds)
        smoothed = None
        if oracle_fed:
            for name, lat in latents.items():
                lat.prob = ds.pi[ds.splits[name]].copy()
            smoothed = latents["calibration"].prob.copy()
        conf = ConformalROC(alpha=alpha, **conformal_params)
        conf.fit(latents["train"], latents["calibration"], smoothed=smoothed)
        test = latents["test"]
        intervals = conf.intervals(test, alpha)
        lam = float(rng.uniform())
        at = conf.band(test, thresholds=[lam], intervals=intervals)
        band = conf.band(test, thresholds=grid, intervals=intervals)
        sens_iv, spec_iv = auc_intervals(band)
        pi_test = ds.pi[ds.splits["test"]]
        sens0, spec0 = roc_curves(pi_test, test.label, [lam])
        auc0_sens, auc0_spec = oracle_auc(pi_test, test.label, grid)
        nested = True
        for a2 in nested_alphas:
            other = conf.band(test, alpha=a2, thresholds=grid)
            wide, narrow = (other, band) if a2 < alpha else (band, other)
            nested &= wide.contains(narrow)
        report.records.append({
            "rep": r, "seed": seed + r, "lambda": lam,
            "sens0": float(sens0[0]), "sens_lo": float(at.sens_lo[0]), "sens_hi": float(at.sens_hi[0]),
            "spec0": float(spec0[0]), "spec_lo": float(at.spec_lo[0]), "spec_hi": float(at.spec_hi[0]),
            "auc0_sens": auc0_sens, "auc_sens": [sens_iv.lower, sens_iv.upper],
            "auc0_spec": auc0_spec, "auc_spec": [spec_iv.lower, spec_iv.upper],
            "sens_covered": bool(at.sens_lo[0] <= sens0[0] <= at.sens_hi[0]),
            "spec_covered": bool(at.spec_lo[0] <= spec0[0] <= at.spec_hi[0]),
            "auc_sens_covered": bool(sens_iv.contains(auc0_sens)),
            "auc_spec_covered": bool(spec_iv.contains(auc0_spec)),
            "nested": bool(nested),
            "test_accuracy": float(np.mean((test.prob > 0.5) == test.label)),
        })
        report.seconds += time.perf_counter() - t0
    return report


@dataclass
class PairedRun:
    """Both structures fitted to one simulated dataset."""

    seed: int
    regime: str
    accuracy: dict
    selection: dict

    @property
    def matched_wins(self):
        other = "cp" if self.regime == "tucker" else "tucker"
        return self.accuracy[self.regime] > self.accuracy[other]

    @property
    def decision(self):
        return self.selection["final_model"]

    @property
    def d_auc_point(self):
        return self.selection["directions"][0]["auc_sens_point"]

    def to_dict(self):
        return {"seed": self.seed, "regime": self.regime, "accuracy": self.accuracy,
                "matched_wins": bool(self.matched_wins), "selection": self.selection}


def paired_run(regime="tucker", seed=0, sim_overrides=None, k=8, omega=10.0, alpha=0.1,
               n_grid=200, **fit_params):
    """Fit Tucker (model A) and CP (model B) on one dataset, then run the selector."""
    ds = gen_dataset(SimConfig(regime=regime, seed=seed, **(sim_overrides or {})))
    models, latents, acc = {}, {}, {}
    for structure in ("tucker", "cp"):
        models[structure] = fit_classifier(ds, structure, random_state=seed, **fit_params)
        latents[structure] = split_latents(models[structure], ds)
        test = latents[structure]["test"]
        acc[structure] = float(np.mean((test.prob > 0.5) == test.label))
    res = selection(models["tucker"], models["cp"], latents["tucker"], latents["cp"], k, omega,
                    alpha, n_grid)
    return PairedRun(seed, regime, acc, res.to_dict(names=("tucker", "cp")))


def paired_experiment(regime="tucker", seeds=range(20), **kwargs):
    return [paired_run(regime, int(s), **kwargs) for s in seeds]

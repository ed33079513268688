"""Synthetic tensor-classification data with a known labeling network.

Each candidate is ``X = S(C) + U_S + U_N``: a Tucker or CP low-rank signal,
a sparse refinement on a fixed support ``J`` whose magnitudes scale with the
signal there, and dense Gaussian noise. A fixed random dual-channel network
maps ``(C, U_D)`` to the true logit, labels are Bernoulli draws, and
candidates are accepted into class buckets until both are full.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .network import DualChannelNet, sigmoid
from .tensor import load_tensors, save_tensors

STREAMS = ("loadings", "cores", "refinement", "labeler", "acceptance", "split", "pilot")


@dataclass
class SimConfig:
    dims: tuple = (32, 32, 32)
    n: int = 2000
    regime: str = "tucker"
    tucker_ranks: tuple = (3, 3, 3)
    smoothing: float = 1.0
    core_norm: float = 5.0
    cp_rank: int = 12
    collinearity: float = 0.1
    ar_coef: float = 0.7
    coef_norm: float = 8.0
    n_active: int = 18
    refinement_scale: tuple = (5.0, 8.0)
    noise_sd: float = 0.1
    labeler_depth: int = 2
    labeler_core_width: tuple | None = None
    labeler_ref_width: tuple | None = None
    # hidden biases of the labeler ~ U[0, labeler_bias]; keeps most units active
    labeler_bias: float = 2.0
    refinement_shape: tuple = (2, 3, 3)
    split: tuple = (0.6, 0.2, 0.2)
    # mean |z| over the pilot draw that fixes the labeler's logit scale
    logit_target: float | None = None
    n_pilot: int = 2000
    budget: int = 1_000_000
    batch: int = 256
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.tucker_ranks = tuple(int(r) for r in self.tucker_ranks)
        self.refinement_shape = tuple(int(k) for k in self.refinement_shape)
        self.refinement_scale = tuple(float(a) for a in self.refinement_scale)
        self.split = tuple(float(s) for s in self.split)
        if self.regime not in ("tucker", "cp"):
            raise ValueError(f"regime must be 'tucker' or 'cp', got {self.regime!r}")
        if int(np.prod(self.refinement_shape)) != self.n_active:
            raise ValueError("refinement_shape must hold exactly n_active entries")
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError("split fractions must be nonnegative and sum to 1")
        if self.n < 2 or self.n % 2:
            raise ValueError("n must be a positive even number (balanced classes)")
        if self.n_active > int(np.prod(self.dims)):
            raise ValueError("support larger than the tensor")
        if self.regime == "tucker" and any(r > d for r, d in zip(self.tucker_ranks, self.dims)):
            raise ValueError("Tucker ranks exceed dims")
        if self.regime == "cp" and self.cp_rank > min(self.dims):
            raise ValueError("CP rank exceeds the smallest dim (QR initialization)")
        if not 0 <= self.ar_coef < 1:
            raise ValueError("ar_coef must lie in [0, 1)")

    @property
    def target(self):
        if self.logit_target is not None:
            return self.logit_target
        return LOGIT_TARGET[self.regime]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# pilot mean |z|, tuned so class-conditional logit and probability means
# land near the reference statistics of each regime
LOGIT_TARGET = {"tucker": 2.9, "cp": 3.3}


@dataclass
class SimStructure:
    """Per-dataset draws shared by every sample."""

    regime: str
    loadings: list
    support: np.ndarray  # flat indices into the ambient tensor, fixed order
    labeler: DualChannelNet
    core_shape: tuple = field(default=())


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def orthonormal(rng, d, r, low=-5.0, high=5.0):
    q, _ = np.linalg.qr(rng.uniform(low, high, size=(d, r)))
    return q


def tucker_loadings(cfg: SimConfig, rng):
    return [orthonormal(rng, d, r) for d, r in zip(cfg.dims, cfg.tucker_ranks)]


def cp_factors(cfg: SimConfig, rng):
    """Unit-norm factor columns whose rank-one terms overlap by ``delta / (r - 1)``."""
    factors = []
    for d in cfg.dims:
        base = orthonormal(rng, d, cfg.cp_rank)
        a = base.copy()
        for r in range(1, cfg.cp_rank):
            theta = cfg.collinearity / r
            eta = np.sqrt(theta ** (-2.0 / 3.0) - 1.0)
            col = base[:, 0] + eta * base[:, r]
            a[:, r] = col / np.linalg.norm(col)
        factors.append(a)
    return factors


def tucker_cores(cfg: SimConfig, rng, n):
    g = rng.standard_normal((n,) + cfg.tucker_ranks)
    g = gaussian_filter(g, sigma=(0,) + (cfg.smoothing,) * len(cfg.tucker_ranks),
                        mode="reflect", truncate=2.0)
    norms = np.sqrt(np.sum(g.reshape(n, -1) ** 2, axis=1))
    return g * (cfg.core_norm / norms).reshape((n,) + (1,) * len(cfg.tucker_ranks))


def cp_coefficients(cfg: SimConfig, rng, n, rescale=True):
    eps = rng.standard_normal((n, cfg.cp_rank))
    c = np.empty_like(eps)
    c[:, 0] = eps[:, 0]
    s = np.sqrt(1.0 - cfg.ar_coef ** 2)
    for r in range(1, cfg.cp_rank):
        c[:, r] = cfg.ar_coef * c[:, r - 1] + s * eps[:, r]
    if rescale:
        c *= cfg.coef_norm / np.linalg.norm(c, axis=1, keepdims=True)
    return c


def signal(cores, structure: SimStructure):
    """Full ambient signal for a batch of cores (Tucker) or coefficient vectors (CP)."""
    u = structure.loadings
    if structure.regime == "tucker":
        return np.einsum("nabc,ia,jb,kc->nijk", cores, *u, optimize=True)
    return np.einsum("nr,ir,jr,kr->nijk", cores, *u, optimize=True)


def signal_at(cores, structure: SimStructure, dims):
    """Signal evaluated only on the support entries, shape ``(n, |J|)``."""
    idx = np.unravel_index(structure.support, dims)
    rows = [u[i] for u, i in zip(structure.loadings, idx)]
    if structure.regime == "tucker":
        return np.einsum("nabc,ja,jb,jc->nj", cores, *rows, optimize=True)
    return np.einsum("nr,jr,jr,jr->nj", cores, *rows, optimize=True)


def refinement_values(cfg: SimConfig, rng, s_at):
    """``U_S(j) = xi * a * |S(j)|`` with a fresh sign and scale per sample and entry."""
    xi = rng.choice((-1.0, 1.0), size=s_at.shape)
    a = rng.uniform(*cfg.refinement_scale, size=s_at.shape)
    return xi * a * np.abs(s_at)


def make_labeler(cfg: SimConfig, core_shape, rng):
    net = DualChannelNet(core_shape, cfg.refinement_shape, depth=cfg.labeler_depth,
                         core_width=cfg.labeler_core_width, ref_width=cfg.labeler_ref_width,
                         layer_norm=False, link="sigmoid")
    net.init_params(rng)
    for name in net.params:
        if name.startswith("B_"):
            net.params[name] = rng.uniform(0.0, cfg.labeler_bias, size=net.params[name].shape)
    return net


def calibrate_labeler(net: DualChannelNet, cores, u_d, target):
    """Center the pilot median logit at zero and scale the output so mean |z| = target."""
    raw = net.forward(cores, refinement=u_d).raw - net.params["b_out"][0]
    med = float(np.median(raw))
    spread = float(np.mean(np.abs(raw - med)))
    if spread <= 0:
        raise ValueError("labeler output is constant on the pilot draw")
    kappa = target / spread
    net.params["W_c_out"] *= kappa
    net.params["W_u_out"] *= kappa
    net.params["b_out"][0] = -kappa * med
    return net


class SimGenerator:
    """Draw the dataset-level structure once, then candidates on demand."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.rng = _streams(cfg.seed)
        if cfg.regime == "tucker":
            loadings = tucker_loadings(cfg, self.rng["loadings"])
            core_shape = cfg.tucker_ranks
        else:
            loadings = cp_factors(cfg, self.rng["loadings"])
            core_shape = (cfg.cp_rank,)
        support = self.rng["loadings"].choice(int(np.prod(cfg.dims)), size=cfg.n_active,
                                              replace=False)
        labeler = make_labeler(cfg, core_shape, self.rng["labeler"])
        self.structure = SimStructure(cfg.regime, loadings, np.sort(support), labeler, core_shape)
        pilot = self._latent(cfg.n_pilot, self.rng["pilot"], self.rng["pilot"])
        calibrate_labeler(labeler, pilot[0], pilot[1], cfg.target)

    def _cores(self, n, rng):
        if self.cfg.regime == "tucker":
            return tucker_cores(self.cfg, rng, n)
        return cp_coefficients(self.cfg, rng, n)

    def _latent(self, n, core_rng, ref_rng):
        cores = self._cores(n, core_rng)
        s_at = signal_at(cores, self.structure, self.cfg.dims)
        u_s = refinement_values(self.cfg, ref_rng, s_at)
        return cores, u_s.reshape((n,) + self.cfg.refinement_shape)

    def logits(self, cores, u_d):
        return self.structure.labeler.forward(cores, refinement=u_d).pre_link

    def candidates(self, n):
        """Latent draws, oracle logits and probabilities for ``n`` candidates (no tensors)."""
        cores, u_d = self._latent(n, self.rng["cores"], self.rng["refinement"])
        z = self.logits(cores, u_d)
        return cores, u_d, z, sigmoid(z)

    def tensors(self, cores, u_d, noise_rng):
        n = cores.shape[0]
        x = signal(cores, self.structure).reshape(n, -1)
        x[:, self.structure.support] += u_d.reshape(n, -1)
        x += noise_rng.normal(0.0, self.cfg.noise_sd, size=x.shape)
        return x.reshape((n,) + self.cfg.dims)

    def generate(self):
        cfg = self.cfg
        per_class = cfg.n // 2
        acc = self.rng["acceptance"]
        kept = {0: [], 1: []}
        counts = [0, 0]
        drawn = 0
        while min(counts) < per_class:
            if drawn >= cfg.budget:
                raise RuntimeError(
                    f"candidate budget {cfg.budget} exhausted with class counts {counts} "
                    f"(target {per_class} each)")
            b = min(cfg.batch, cfg.budget - drawn)
            cores, u_d, z, pi = self.candidates(b)
            y = (acc.random(b) < pi).astype(np.int64)
            drawn += b
            take = np.zeros(b, dtype=bool)
            for i in range(b):
                if counts[y[i]] < per_class:
                    counts[y[i]] += 1
                    take[i] = True
            if take.any():
                noise = np.random.default_rng(acc.integers(2**63))
                x = self.tensors(cores[take], u_d[take], noise)
                for xi, ci, ui, zi, pii, yi in zip(x, cores[take], u_d[take], z[take], pi[take],
                                                   y[take]):
                    kept[yi].append((xi, ci, ui, zi, pii))
        rows = kept[0] + kept[1]
        labels = np.repeat([0, 1], per_class)
        ds = SimDataset(
            X=np.stack([r[0] for r in rows]),
            y=labels,
            cores=np.stack([r[1] for r in rows]),
            refinement=np.stack([r[2] for r in rows]),
            z=np.array([r[3] for r in rows]),
            pi=np.array([r[4] for r in rows]),
            config=cfg,
            structure=self.structure,
            n_candidates=drawn,
        )
        ds.splits = stratified_split(labels, cfg.split, self.rng["split"])
        return ds


def stratified_split(y, fractions, rng):
    """Per-class shuffled split into train/calibration/test index arrays."""
    parts = {"train": [], "calibration": [], "test": []}
    for k in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == k))
        n_tr = int(round(fractions[0] * idx.size))
        n_ca = int(round(fractions[1] * idx.size))
        parts["train"].append(idx[:n_tr])
        parts["calibration"].append(idx[n_tr:n_tr + n_ca])
        parts["test"].append(idx[n_tr + n_ca:])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


@dataclass
class SimDataset:
    X: np.ndarray
    y: np.ndarray
    cores: np.ndarray
    refinement: np.ndarray
    z: np.ndarray
    pi: np.ndarray
    config: SimConfig | None = None
    structure: SimStructure | None = None
    n_candidates: int = 0
    splits: dict = field(default_factory=dict)

    def subset(self, name):
        idx = self.splits[name]
        return self.X[idx], self.y[idx]

    def summary(self):
        out = {}
        for k in (0, 1):
            m = self.y == k
            out[f"z_mean_y{k}"] = float(self.z[m].mean())
            out[f"z_std_y{k}"] = float(self.z[m].std(ddof=1))
            out[f"pi_mean_y{k}"] = float(self.pi[m].mean())
            out[f"pi_std_y{k}"] = float(self.pi[m].std(ddof=1))
        out["n_candidates"] = int(self.n_candidates)
        return out

    # -- persistence -----------------------------------------------------------

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        save_tensors(os.path.join(directory, "X.bin"), [self.X])
        save_tensors(os.path.join(directory, "oracle.bin"), [self.cores, self.refinement])
        split_of = np.empty(self.y.size, dtype=object)
        split_of[:] = ""
        for name, idx in self.splits.items():
            split_of[idx] = name
        with open(os.path.join(directory, "samples.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "y", "true_pi", "true_logit", "split"])
            for i in range(self.y.size):
                w.writerow([i, int(self.y[i]), f"{self.pi[i]:.10g}", f"{self.z[i]:.10g}", split_of[i]])
        meta = {"n_candidates": int(self.n_candidates)}
        if self.config is not None:
            meta["config"] = self.config.to_dict()
        if self.structure is not None:
            meta["support"] = self.structure.support.tolist()
            meta["regime"] = self.structure.regime
        with open(os.path.join(directory, "config.json"), "w") as f:
            json.dump(meta, f, indent=2)
        if self.structure is not None:
            save_tensors(os.path.join(directory, "loadings.bin"), self.structure.loadings)
            self.structure.labeler.save(os.path.join(directory, "labeler"))

    @classmethod
    def load(cls, directory):
        (X,) = load_tensors(os.path.join(directory, "X.bin"))
        ys, pis, zs, split_of = [], [], [], []
        with open(os.path.join(directory, "samples.csv")) as f:
            for row in csv.DictReader(f):
                ys.append(int(row["y"]))
                pis.append(float(row["true_pi"]) if row["true_pi"] else np.nan)
                zs.append(float(row["true_logit"]) if row["true_logit"] else np.nan)
                split_of.append(row["split"])
        cores = refinement = None
        oracle = os.path.join(directory, "oracle.bin")
        if os.path.exists(oracle):
            cores, refinement = load_tensors(oracle)
        with open(os.path.join(directory, "config.json")) as f:
            meta = json.load(f)
        cfg = SimConfig.from_dict(meta["config"]) if "config" in meta else None
        structure = None
        if os.path.exists(os.path.join(directory, "loadings.bin")):
            labeler = DualChannelNet.load(os.path.join(directory, "labeler"))
            structure = SimStructure(meta["regime"], load_tensors(os.path.join(directory, "loadings.bin")),
                                     np.array(meta["support"], dtype=np.int64), labeler,
                                     labeler.core_shape)
        split_of = np.array(split_of)
        splits = {name: np.flatnonzero(split_of == name) for name in ("train", "calibration", "test")}
        return cls(X, np.array(ys), cores, refinement, np.array(zs), np.array(pis), cfg, structure,
                   meta.get("n_candidates", 0), splits)

    @property
    def has_oracle(self):
        return bool(np.all(np.isfinite(self.pi)))


def gen_dataset(cfg: SimConfig | None = None, **overrides) -> SimDataset:
    if cfg is None:
        cfg = SimConfig(**overrides)
    elif overrides:
        cfg = SimConfig.from_dict({**cfg.to_dict(), **overrides})
    return SimGenerator(cfg).generate()

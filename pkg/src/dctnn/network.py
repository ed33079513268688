"""Dual-channel deep ReLU tensor network.

The core channel starts from the low-rank core ``C`` and the refinement
channel from ``U = W_sel • X`` (a learned sparse selection of the centered
tensor). Each hidden layer mixes both channels through four contraction
weights, then the output layer reads out one scalar, which is truncated at
``±V`` and passed through the link.

Weight tensors keep their full mode structure (``out modes + in modes``);
contractions are evaluated batched by flattening, which matches
:func:`dctnn.tensor.contract` sample by sample.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels, check_tensor_batch
from .decomp import CPDecomposition, TuckerDecomposition, decomposition_from_dict
from .tensor import load_tensors, save_tensors

LN_EPS = 1e-5
BCE_EPS = 1e-12


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def clipped_l1(w, lam: float, tau: float) -> float:
    """``sum lam * min(|w| / tau, 1)`` over all entries."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float(lam * np.sum(np.minimum(np.abs(w) / tau, 1.0)))


def clipped_l1_subgradient(w, lam: float, tau: float) -> np.ndarray:
    """``sign(w) * lam / tau`` inside the clip region, zero on and beyond ``|w| = tau``."""
    w = np.asarray(w)
    out = np.sign(w)
    out[np.abs(w) >= tau] = 0.0
    out *= lam / tau
    return out


def truncate(z, v: float):
    """``sgn(z) * min(|z|, v)``."""
    return np.clip(z, -v, v)


@dataclass
class TrainConfig:
    lam: float = 0.1
    tau: float = 0.05
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    loss: str = "bce"
    weight_bound: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.loss not in ("bce", "squared"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class ForwardTrace:
    output: np.ndarray
    pre_link: np.ndarray
    raw: np.ndarray
    refinement: np.ndarray
    layers: list = field(default_factory=list)


def _size(shape):
    return int(np.prod(shape, dtype=np.int64))


class DualChannelNet:
    """Parameters and forward/backward passes of one dual-channel network.

    Parameters
    ----------
    core_shape, ref_shape : tuple of int
        Input shapes of the core and refinement channels.
    x_shape : tuple of int or None
        Ambient tensor shape; when given, the refinement input is produced by
        the selector ``W_sel`` of shape ``ref_shape + x_shape``.
    depth : int
        Number of hidden dual-channel layers ``L``.
    core_width, ref_width : tuple of int or None
        Hidden shapes, constant across layers; default to the input shapes.
    """

    def __init__(self, core_shape, ref_shape, x_shape=None, depth=3, core_width=None,
                 ref_width=None, layer_norm=False, truncation=math.inf, link="sigmoid"):
        self.core_shape = tuple(int(d) for d in core_shape)
        self.ref_shape = tuple(int(d) for d in ref_shape)
        self.x_shape = None if x_shape is None else tuple(int(d) for d in x_shape)
        self.depth = int(depth)
        self.core_width = tuple(core_width) if core_width is not None else self.core_shape
        self.ref_width = tuple(ref_width) if ref_width is not None else self.ref_shape
        self.layer_norm = bool(layer_norm)
        self.truncation = float(truncation)
        if link not in ("sigmoid", "identity"):
            raise ValueError(f"unknown link {link!r}")
        self.link = link
        if self.truncation <= 0:
            raise ValueError("truncation level must be positive")
        self.params: dict[str, np.ndarray] = {}

    # -- structure -------------------------------------------------------------

    def layer_shapes(self):
        """``(in_core, in_ref, out_core, out_ref)`` for each hidden layer."""
        shapes = []
        ci, ui = self.core_shape, self.ref_shape
        for _ in range(self.depth):
            shapes.append((ci, ui, self.core_width, self.ref_width))
            ci, ui = self.core_width, self.ref_width
        return shapes

    def param_shapes(self):
        shapes = {}
        for l, (ci, ui, co, uo) in enumerate(self.layer_shapes()):
            shapes[f"W_cc{l}"] = co + ci
            shapes[f"W_cu{l}"] = co + ui
            shapes[f"W_uc{l}"] = uo + ci
            shapes[f"W_uu{l}"] = uo + ui
            shapes[f"B_c{l}"] = co
            shapes[f"B_u{l}"] = uo
            if self.layer_norm:
                shapes[f"ln_gc{l}"] = co
                shapes[f"ln_bc{l}"] = co
                shapes[f"ln_gu{l}"] = uo
                shapes[f"ln_bu{l}"] = uo
        cl, ul = (self.core_width, self.ref_width) if self.depth else (self.core_shape, self.ref_shape)
        shapes["W_c_out"] = (1,) + cl
        shapes["W_u_out"] = (1,) + ul
        shapes["b_out"] = (1,)
        if self.x_shape is not None:
            shapes["W_sel"] = self.ref_shape + self.x_shape
        return shapes

    def bounded_names(self):
        return [k for k in self.param_shapes() if not k.startswith(("ln_", "W_sel"))]

    def init_params(self, rng, scale=1.0):
        """Uniform ``[-s, s]`` with ``s = scale / sqrt(fan_in)`` per contraction block."""
        self.params = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("ln_g"):
                self.params[name] = np.ones(shape)
            elif name.startswith(("B_", "b_", "ln_b")):
                self.params[name] = np.zeros(shape)
            else:
                n_out = 1 if name.endswith("_out") else len(self._out_shape(name))
                fan_in = _size(shape[n_out:])
                s = scale / math.sqrt(fan_in)
                self.params[name] = rng.uniform(-s, s, size=shape)
        return self

    def _out_shape(self, name):
        if name == "W_sel":
            return self.ref_shape
        l = int(name[4:])
        _, _, co, uo = self.layer_shapes()[l]
        return co if name[:4] in ("W_cc", "W_cu") else uo

    def zero_params(self):
        self.params = {k: np.zeros(s) for k, s in self.param_shapes().items()}
        if self.layer_norm:
            for k in self.params:
                if k.startswith("ln_g"):
                    self.params[k][...] = 1.0
        return self

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        other = DualChannelNet(self.core_shape, self.ref_shape, self.x_shape, self.depth,
                               self.core_width, self.ref_width, self.layer_norm,
                               self.truncation, self.link)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # -- forward ---------------------------------------------------------------

    def _mat(self, name, n_out):
        w = self.params[name]
        return w.reshape(_size(w.shape[:n_out]), -1)

    def select(self, Xc):
        """Refinement input ``W_sel • X`` for a batch of centered tensors."""
        n = Xc.shape[0]
        w = self._mat("W_sel", len(self.ref_shape))
        return (Xc.reshape(n, -1) @ w.T).reshape((n,) + self.ref_shape)

    def forward(self, core, x_centered=None, refinement=None) -> ForwardTrace:
        """Batched forward pass.

        ``core`` has shape ``(n,) + core_shape``. Give either the centered
        ambient tensors (passed through the selector) or the refinement
        input directly.
        """
        core = np.asarray(core, dtype=np.float64)
        n = core.shape[0]
        if core.shape[1:] != self.core_shape:
            raise ValueError(f"core shape {core.shape[1:]} != {self.core_shape}")
        if refinement is None:
            if self.x_shape is None or x_centered is None:
                raise ValueError("need the refinement input or centered tensors with a selector")
            x_centered = np.asarray(x_centered, dtype=np.float64)
            if x_centered.shape[1:] != self.x_shape or x_centered.shape[0] != n:
                raise ValueError(f"tensor batch shape {x_centered.shape} does not match {self.x_shape}")
            refinement = self.select(x_centered)
        refinement = np.asarray(refinement, dtype=np.float64)
        if refinement.shape[1:] != self.ref_shape:
            raise ValueError(f"refinement shape {refinement.shape[1:]} != {self.ref_shape}")

        hc = core.reshape(n, -1)
        hu = refinement.reshape(n, -1)
        layers = []
        for l in range(self.depth):
            _, _, co, uo = self.layer_shapes()[l]
            zc = (hc @ self._mat(f"W_cc{l}", len(co)).T + hu @ self._mat(f"W_cu{l}", len(co)).T
                  + self.params[f"B_c{l}"].ravel())
            zu = (hc @ self._mat(f"W_uc{l}", len(uo)).T + hu @ self._mat(f"W_uu{l}", len(uo)).T
                  + self.params[f"B_u{l}"].ravel())
            rec = {"hc": hc, "hu": hu}
            if self.layer_norm:
                zc, rec["ln_c"] = _layer_norm(zc, self.params[f"ln_gc{l}"].ravel(),
                                              self.params[f"ln_bc{l}"].ravel())
                zu, rec["ln_u"] = _layer_norm(zu, self.params[f"ln_gu{l}"].ravel(),
                                              self.params[f"ln_bu{l}"].ravel())
            rec["mask_c"] = zc > 0
            rec["mask_u"] = zu > 0
            hc = np.where(rec["mask_c"], zc, 0.0)
            hu = np.where(rec["mask_u"], zu, 0.0)
            layers.append(rec)
        layers.append({"hc": hc, "hu": hu})
        raw = (hc @ self.params["W_c_out"].reshape(1, -1).T
               + hu @ self.params["W_u_out"].reshape(1, -1).T)[:, 0] + self.params["b_out"][0]
        pre_link = truncate(raw, self.truncation)
        out = sigmoid(pre_link) if self.link == "sigmoid" else pre_link
        return ForwardTrace(out, pre_link, raw, refinement, layers)

    def predict(self, core, x_centered=None, refinement=None, chunk=512):
        n = np.asarray(core).shape[0]
        out = np.empty(n)
        for s in range(0, n, chunk):
            sl = slice(s, s + chunk)
            out[sl] = self.forward(core[sl], None if x_centered is None else x_centered[sl],
                                   None if refinement is None else refinement[sl]).output
        return out

    # -- loss and gradients ----------------------------------------------------

    def data_loss(self, trace: ForwardTrace, y, loss="bce"):
        y = np.asarray(y, dtype=np.float64)
        if loss == "bce":
            p = np.clip(trace.output, BCE_EPS, 1 - BCE_EPS)
            per = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        else:
            per = (y - trace.output) ** 2
        return float(per.mean())

    def loss(self, core, y, cfg: TrainConfig, x_centered=None, refinement=None):
        """Mean data loss plus the clipped-L1 selector penalty, and residuals ``yhat - y``."""
        trace = self.forward(core, x_centered, refinement)
        value = self.data_loss(trace, y, cfg.loss)
        if "W_sel" in self.params:
            value += clipped_l1(self.params["W_sel"], cfg.lam, cfg.tau)
        return value, trace.output - np.asarray(y, dtype=np.float64)

    def backward(self, trace: ForwardTrace, y, cfg: TrainConfig, x_centered=None):
        """Gradients of :meth:`loss` for every parameter."""
        y = np.asarray(y, dtype=np.float64)
        n = y.shape[0]
        if cfg.loss == "bce":
            if self.link != "sigmoid":
                raise ValueError("binary cross-entropy needs the sigmoid link")
            p = trace.output
            inside = (p > BCE_EPS) & (p < 1 - BCE_EPS)
            g = np.where(inside, (p - y) / n, 0.0)
        else:
            g = 2.0 * (trace.output - y) / n
            if self.link == "sigmoid":
                g = g * trace.output * (1 - trace.output)
        # truncation passes gradient only strictly inside (-V, V)
        g = g * (np.abs(trace.raw) < self.truncation)

        grads = {}
        last = trace.layers[-1]
        grads["b_out"] = np.array([g.sum()])
        grads["W_c_out"] = (g @ last["hc"]).reshape(self.params["W_c_out"].shape)
        grads["W_u_out"] = (g @ last["hu"]).reshape(self.params["W_u_out"].shape)
        dhc = np.outer(g, self.params["W_c_out"].ravel())
        dhu = np.outer(g, self.params["W_u_out"].ravel())

        for l in reversed(range(self.depth)):
            rec = trace.layers[l]
            _, _, co, uo = self.layer_shapes()[l]
            dzc = dhc * rec["mask_c"]
            dzu = dhu * rec["mask_u"]
            if self.layer_norm:
                dzc, grads[f"ln_gc{l}"], grads[f"ln_bc{l}"] = _layer_norm_backward(
                    dzc, rec["ln_c"], self.params[f"ln_gc{l}"].ravel())
                dzu, grads[f"ln_gu{l}"], grads[f"ln_bu{l}"] = _layer_norm_backward(
                    dzu, rec["ln_u"], self.params[f"ln_gu{l}"].ravel())
                for k in ("gc", "bc", "gu", "bu"):
                    name = f"ln_{k}{l}"
                    grads[name] = grads[name].reshape(self.params[name].shape)
            hc, hu = rec["hc"], rec["hu"]
            grads[f"B_c{l}"] = dzc.sum(0).reshape(co)
            grads[f"B_u{l}"] = dzu.sum(0).reshape(uo)
            for name, dz, h in (("W_cc", dzc, hc), ("W_cu", dzc, hu),
                                ("W_uc", dzu, hc), ("W_uu", dzu, hu)):
                grads[f"{name}{l}"] = (dz.T @ h).reshape(self.params[f"{name}{l}"].shape)
            wcc = self._mat(f"W_cc{l}", len(co))
            wcu = self._mat(f"W_cu{l}", len(co))
            wuc = self._mat(f"W_uc{l}", len(uo))
            wuu = self._mat(f"W_uu{l}", len(uo))
            dhc = dzc @ wcc + dzu @ wuc
            dhu = dzc @ wcu + dzu @ wuu

        if "W_sel" in self.params:
            if x_centered is None:
                raise ValueError("selector gradient needs the centered tensors")
            xs = np.asarray(x_centered).reshape(n, -1)
            gsel = (dhu.T @ xs).reshape(self.params["W_sel"].shape)
            gsel += clipped_l1_subgradient(self.params["W_sel"], cfg.lam, cfg.tau)
            grads["W_sel"] = gsel
        return grads

    # -- persistence -----------------------------------------------------------

    def manifest(self):
        return {
            "core_shape": list(self.core_shape), "ref_shape": list(self.ref_shape),
            "x_shape": None if self.x_shape is None else list(self.x_shape),
            "depth": self.depth, "core_width": list(self.core_width),
            "ref_width": list(self.ref_width), "layer_norm": self.layer_norm,
            "truncation": None if math.isinf(self.truncation) else self.truncation,
            "link": self.link, "param_names": list(self.params),
        }

    @classmethod
    def from_manifest(cls, m, tensors=None):
        net = cls(m["core_shape"], m["ref_shape"], m["x_shape"], m["depth"], m["core_width"],
                  m["ref_width"], m["layer_norm"],
                  math.inf if m["truncation"] is None else m["truncation"], m["link"])
        if tensors is not None:
            net.params = dict(zip(m["param_names"], tensors))
        return net

    def save(self, stem):
        """Write ``<stem>.bin`` (tensor container) and ``<stem>.json`` (manifest)."""
        save_tensors(f"{stem}.bin", list(self.params.values()))
        with open(f"{stem}.json", "w") as f:
            json.dump(self.manifest(), f, indent=2)

    @classmethod
    def load(cls, stem):
        with open(f"{stem}.json") as f:
            m = json.load(f)
        return cls.from_manifest(m, load_tensors(f"{stem}.bin"))


def _layer_norm(z, gamma, beta):
    mu = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    zhat = (z - mu) * inv
    return zhat * gamma + beta, (zhat, inv)


def _layer_norm_backward(dout, cache, gamma):
    zhat, inv = cache
    d = zhat.shape[1]
    dgamma = np.sum(dout * zhat, axis=0)
    dbeta = np.sum(dout, axis=0)
    dzhat = dout * gamma
    dz = (inv / d) * (d * dzhat - dzhat.sum(axis=1, keepdims=True)
                      - zhat * np.sum(dzhat * zhat, axis=1, keepdims=True))
    return dz, dgamma, dbeta


class Adam:
    """Adam with coupled L2 weight decay (``g += wd * w``)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        """One update; ``grads`` may be overwritten."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            tmp = np.empty_like(p)
            if self.weight_decay:
                np.multiply(p, self.weight_decay, out=tmp)
                g = np.add(g, tmp, out=g if g.flags.writeable else None)
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m += tmp
            v *= self.beta2
            np.square(g, out=tmp)
            tmp *= 1.0 - self.beta2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(bc2)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / bc1
            p -= tmp


def train(net: DualChannelNet, cores, y, cfg: TrainConfig, x_centered=None, refinement=None,
          init=True, callback=None):
    """Minimize data loss plus selector penalty with mini-batch Adam.

    Returns the per-epoch history of the full objective evaluated on the
    mini-batches of that epoch (mean over batches).
    """
    cores = np.asarray(cores, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = cores.shape[0]
    if y.shape[0] != n or (x_centered is not None and x_centered.shape[0] != n):
        raise ValueError("inconsistent sample counts")
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if init:
        net.init_params(np.random.default_rng(init_seq))
    rng = np.random.default_rng(shuffle_seq)
    opt = Adam(cfg.lr, weight_decay=cfg.weight_decay)
    bounded = net.bounded_names() if cfg.weight_bound is not None else []
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            xb = None if x_centered is None else x_centered[idx]
            rb = None if refinement is None else refinement[idx]
            trace = net.forward(cores[idx], xb, rb)
            value = net.data_loss(trace, y[idx], cfg.loss)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {batches}: "
                    f"max |pre-link| = {np.max(np.abs(trace.raw)):.3g}")
            grads = net.backward(trace, y[idx], cfg, xb)
            opt.step(net.params, grads)
            for k in bounded:
                np.clip(net.params[k], -cfg.weight_bound, cfg.weight_bound, out=net.params[k])
            total += value
            batches += 1
        penalty = clipped_l1(net.params["W_sel"], cfg.lam, cfg.tau) if "W_sel" in net.params else 0.0
        history.append(total / max(batches, 1) + penalty)
        if callback is not None:
            callback(epoch, net)
    return history


# -- estimators ----------------------------------------------------------------

class _DCTNNBase(BaseEstimator):
    """Two-stage DC-TNN: fit a decomposition, then train the network on its cores."""

    _loss = "bce"
    _link = "sigmoid"

    def __init__(self, structure="tucker", ranks=(4, 4, 4), cp_rank=16, refinement_shape=(3, 3, 3),
                 depth=3, hidden_core=None, hidden_ref=None, layer_norm=True,
                 truncation=math.inf, lam=0.1, tau=0.05, lr=1e-3, weight_decay=1e-4,
                 batch_size=128, epochs=10, weight_bound=None, hooi_iters=50, als_iters=200,
                 decomp_tol=1e-6, random_state=0):
        self.structure = structure
        self.ranks = ranks
        self.cp_rank = cp_rank
        self.refinement_shape = refinement_shape
        self.depth = depth
        self.hidden_core = hidden_core
        self.hidden_ref = hidden_ref
        self.layer_norm = layer_norm
        self.truncation = truncation
        self.lam = lam
        self.tau = tau
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_bound = weight_bound
        self.hooi_iters = hooi_iters
        self.als_iters = als_iters
        self.decomp_tol = decomp_tol
        self.random_state = random_state

    def train_config(self):
        return TrainConfig(lam=self.lam, tau=self.tau, lr=self.lr, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, epochs=self.epochs,
                           seed=0 if self.random_state is None else int(self.random_state),
                           loss=self._loss, weight_bound=self.weight_bound)

    def _make_decomposition(self):
        if self.structure == "tucker":
            return TuckerDecomposition(ranks=self.ranks, hooi_iters=self.hooi_iters,
                                       tol=self.decomp_tol)
        if self.structure == "cp":
            return CPDecomposition(rank=self.cp_rank, als_iters=self.als_iters,
                                   tol=self.decomp_tol, random_state=self.random_state)
        raise ValueError(f"structure must be 'tucker' or 'cp', got {self.structure!r}")

    def _fit(self, X, y):
        X = check_tensor_batch(X)
        cfg = self.train_config()
        self.decomposition_ = self._make_decomposition().fit(X)
        cores = self.decomposition_.transform(X)
        Xc = X - self.decomposition_.mean_
        del X
        self.net_ = DualChannelNet(cores.shape[1:], self.refinement_shape, Xc.shape[1:],
                                   depth=self.depth, core_width=self.hidden_core,
                                   ref_width=self.hidden_ref, layer_norm=self.layer_norm,
                                   truncation=self.truncation, link=self._link)
        self.history_ = train(self.net_, cores, y, cfg, x_centered=Xc)
        self.train_output_ = self.net_.predict(cores, Xc)
        self.residuals_ = self.train_output_ - y
        return self

    def latent(self, X):
        """Per-sample ``(core, refinement)`` representation."""
        check_is_fitted(self, "net_")
        X = check_tensor_batch(X, self.decomposition_.mean_.shape)
        cores = self.decomposition_.transform(X)
        Xc = X - self.decomposition_.mean_
        return cores, self.net_.select(Xc)

    def _output(self, X, chunk=256):
        check_is_fitted(self, "net_")
        X = check_tensor_batch(X, self.decomposition_.mean_.shape)
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], chunk):
            xb = X[s:s + chunk]
            out[s:s + chunk] = self.net_.forward(self.decomposition_.transform(xb),
                                                 xb - self.decomposition_.mean_).output
        return out

    def selected_support(self):
        """Ambient indices whose selector weights reach the clipping threshold."""
        check_is_fitted(self, "net_")
        w = self.net_.params["W_sel"].reshape(_size(self.net_.ref_shape), -1)
        return np.flatnonzero(np.max(np.abs(w), axis=0) >= self.tau)

    def save(self, directory):
        import os
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "decomposition.json"), "w") as f:
            json.dump(self.decomposition_.to_dict(), f)
        self.net_.save(os.path.join(directory, "net"))
        with open(os.path.join(directory, "estimator.json"), "w") as f:
            json.dump({"class": type(self).__name__, "params": _jsonable(self.get_params()),
                       "history": self.history_}, f, indent=2)

    @classmethod
    def load(cls, directory):
        import os
        with open(os.path.join(directory, "estimator.json")) as f:
            meta = json.load(f)
        params = meta["params"]
        for k in ("ranks", "refinement_shape", "hidden_core", "hidden_ref"):
            if params.get(k) is not None:
                params[k] = tuple(params[k])
        if params.get("truncation") is None:
            params["truncation"] = math.inf
        klass = {"DCTNNClassifier": DCTNNClassifier, "DCTNNRegressor": DCTNNRegressor}[meta["class"]]
        self = klass(**params)
        with open(os.path.join(directory, "decomposition.json")) as f:
            self.decomposition_ = decomposition_from_dict(json.load(f))
        self.net_ = DualChannelNet.load(os.path.join(directory, "net"))
        self.history_ = meta["history"]
        return self


def _jsonable(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, float) and math.isinf(v):
            v = None
        out[k] = v
    return out


class DCTNNClassifier(ClassifierMixin, _DCTNNBase):
    """Binary DC-TNN classifier (sigmoid link, cross-entropy plus clipped-L1 selector penalty)."""

    def fit(self, X, y):
        X = check_tensor_batch(X)
        y = check_binary_labels(y, X.shape[0])
        self.classes_ = np.array([0, 1])
        return self._fit(X, y.astype(np.float64))

    def predict_proba(self, X):
        p = self._output(X)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self._output(X) > 0.5).astype(np.int64)


class DCTNNRegressor(RegressorMixin, _DCTNNBase):
    """DC-TNN with identity link and squared loss."""

    _loss = "squared"
    _link = "identity"

    def fit(self, X, y):
        X = check_tensor_batch(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError("inconsistent sample counts")
        return self._fit(X, y)

    def predict(self, X):
        return self._output(X)


def train_config_dict(cfg: TrainConfig):
    return asdict(cfg)

"""Planted low-rank data shared by the decomposition tests and the acceptance suite."""
import numpy as np

from dctnn.simgen import SimConfig, cp_coefficients, cp_factors, orthonormal, tucker_cores


def planted_tucker(n=200, dims=(12, 10, 8), ranks=(3, 3, 3), seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    loadings = [orthonormal(rng, d, r) for d, r in zip(dims, ranks)]
    cfg = SimConfig(dims=dims, tucker_ranks=ranks)
    cores = tucker_cores(cfg, rng, n)
    X = np.einsum("nabc,ia,jb,kc->nijk", cores, *loadings)
    if noise:
        X = X + noise * rng.standard_normal(X.shape)
    return X, loadings, cores


def planted_cp(n=300, dims=(32, 32, 32), rank=12, collinearity=0.1, seed=0):
    rng = np.random.default_rng(seed)
    cfg = SimConfig(dims=dims, regime="cp", cp_rank=rank, collinearity=collinearity)
    factors = cp_factors(cfg, rng)
    coefs = cp_coefficients(cfg, rng, n)
    X = np.einsum("nr,ir,jr,kr->nijk", coefs, *factors)
    return X, factors, coefs


def max_principal_sine(estimated, true):
    """Sine of the largest principal angle between span(true) and span(estimated)."""
    q, _ = np.linalg.qr(estimated)
    resid = true - q @ (q.T @ true)
    return float(np.linalg.norm(resid, 2))


def _pattern(net, trace, cfg):
    from dctnn.network import BCE_EPS
    parts = [np.abs(trace.raw) < net.truncation]
    for rec in trace.layers[:-1]:
        parts += [rec["mask_c"].ravel(), rec["mask_u"].ravel()]
    if cfg.loss == "bce":
        parts.append((trace.output > BCE_EPS) & (trace.output < 1 - BCE_EPS))
    if "W_sel" in net.params:
        w = np.abs(net.params["W_sel"].ravel())
        parts += [w < cfg.tau, w == 0]
    return np.concatenate([np.ravel(p) for p in parts])


def gradient_check(seed, h=1e-5, floor=1e-6):
    """Max relative error between analytic and central-difference gradients of a tiny net.

    A coordinate is skipped when the perturbation moves any ReLU unit, the
    truncation, the BCE clamp or a selector entry across its kink.
    Returns ``(max_rel_err, n_checked, n_skipped)``.
    """
    from dctnn.network import DualChannelNet, TrainConfig
    rng = np.random.default_rng(seed)
    layer_norm = bool(seed % 2)
    loss = "bce" if seed % 4 < 2 else "squared"
    link = "sigmoid"
    truncation = float(rng.uniform(0.5, 3.0)) if seed % 3 == 0 else np.inf
    net = DualChannelNet((2, 2), (2,), (3, 2), depth=2, layer_norm=layer_norm,
                         truncation=truncation, link=link)
    net.init_params(rng, scale=2.0)
    for k, p in net.params.items():
        if k.startswith(("B_", "b_", "ln_b")):
            p[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    net.params["W_sel"] *= rng.choice([0.05, 1.0], size=net.params["W_sel"].shape)
    n = 8
    C = rng.normal(size=(n, 2, 2))
    X = rng.normal(size=(n, 3, 2))
    y = rng.integers(0, 2, n).astype(float)
    cfg = TrainConfig(lam=0.1, tau=0.05, loss=loss)
    trace = net.forward(C, X)
    grads = net.backward(trace, y, cfg, X)
    worst, checked, skipped = 0.0, 0, 0
    for k, p in net.params.items():
        for i in np.ndindex(p.shape):
            o = p[i]
            p[i] = o + h
            lp, _ = net.loss(C, y, cfg, X)
            pat_p = _pattern(net, net.forward(C, X), cfg)
            p[i] = o - h
            lm, _ = net.loss(C, y, cfg, X)
            pat_m = _pattern(net, net.forward(C, X), cfg)
            p[i] = o
            if not np.array_equal(pat_p, pat_m):
                skipped += 1
                continue
            fd = (lp - lm) / (2 * h)
            a = grads[k][i]
            worst = max(worst, abs(fd - a) / max(abs(fd), abs(a), floor))
            checked += 1
    return worst, checked, skipped

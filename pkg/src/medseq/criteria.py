"""Parameter counts, BIC and silhouette-style cluster diagnostics."""

from __future__ import annotations

import numpy as np

from .edm import has_noise, precision_kind


def count_params(
    model_type: str,
    G: int,
    v_t,
    gating_mode: str = "free",
    n_design: int = 1,
    noise_gating: str = "NGN",
) -> int:
    """Free parameters of a model.

    ``v_t`` are the numbers of states observed at each time point and
    ``n_design`` the gating design width (intercept included, so r + 1).
    """
    v_t = np.asarray(v_t)
    T = len(v_t)
    noise = has_noise(model_type)
    G_est = G - 1 if noise else G
    central = G_est * int((v_t - 1).sum())
    kind = precision_kind(model_type)
    precision = {
        "scalar": 1 if G_est > 0 else 0,
        "perCluster": G_est,
        "perTime": T if G_est > 0 else 0,
        "perClusterPerTime": G_est * T,
    }[kind]
    if gating_mode == "covariate":
        if noise and noise_gating == "NGN":
            gating = n_design * (G - 2) + 1
        else:
            gating = n_design * (G - 1)
    elif gating_mode == "free":
        gating = G - 1
    elif gating_mode == "equal":
        gating = 1 if noise and G > 1 else 0
    else:
        raise ValueError(f"unknown gating mode {gating_mode!r}")
    return central + precision + gating


def count_params_for(spec, ds) -> int:
    g = spec.gating
    width = 1 + len(ds.design_columns(g.covariates))
    return count_params(spec.model_type, spec.G, ds.v_t, g.mode, width, g.noise_gating)


def bic(loglik: float, k: int, n: float) -> float:
    """2 loglik - k log n; larger is better."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 * loglik - k * np.log(n)


def dbs(Z, eps: float = 1e-100) -> np.ndarray:
    """Density-based silhouette of each row of a membership matrix."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ValueError("density-based silhouettes need G >= 2")
    top = -np.sort(-Z, axis=1)
    z0, z1 = top[:, 0], top[:, 1]
    crisp = z1 < eps
    out = np.ones(len(Z))
    if np.all(crisp):
        return out
    ratio = np.log(z0[~crisp]) - np.log(z1[~crisp])
    scale = np.abs(ratio).max()
    out[~crisp] = ratio / scale if scale > 0 else 0.0
    return out


def wdbs(Z, w, eps: float = 1e-100) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ dbs(Z, eps) / w.sum())


def silhouette_widths(D, labels, w) -> np.ndarray:
    """Weighted silhouette width of each observation.

    Mean distances are weighted by ``w``; an observation's own weight is left
    out of its within-cluster mean. Members of singleton clusters get 0.
    """
    D = np.asarray(D, dtype=float)
    labels = np.asarray(labels)
    w = np.asarray(w, dtype=float)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise ValueError("silhouettes need at least 2 nonempty clusters")
    member = labels[:, None] == clusters[None, :]
    mass = w @ member
    sums = D @ (member * w[:, None])
    own = np.searchsorted(clusters, labels)
    idx = np.arange(len(labels))
    own_mass = mass[own] - w
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[idx, own] / own_mass
        means = sums / mass[None, :]
    means[idx, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    singleton = member.sum(axis=0)[own] == 1
    s[singleton | ~(own_mass > 0)] = 0.0
    return s


def wasw(D, labels, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ silhouette_widths(D, labels, w) / w.sum())

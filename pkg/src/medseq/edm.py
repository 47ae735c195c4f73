"""Exponential-distance components: densities and closed-form CM-steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import PrecisionStructure, log_psi_rows, log_psi_weighted

MODEL_TYPES = ("CC", "UC", "CU", "UU", "CCN", "UCN", "CUN", "UUN")

_KIND = {
    "CC": "scalar",
    "UC": "perCluster",
    "CU": "perTime",
    "UU": "perClusterPerTime",
}

DEFAULT_LAMBDA_MAX = 1e3

# relative slack under which weighted-mode scores count as tied
_TIE_RTOL = 1e-12


def precision_kind(model_type: str) -> str:
    return _KIND[model_type[:2]]


def has_noise(model_type: str) -> bool:
    if model_type not in MODEL_TYPES:
        raise ValueError(f"unknown model type {model_type!r}")
    return model_type.endswith("N")


@dataclass(frozen=True)
class ComponentParams:
    thetas: np.ndarray  # (G_est, T) state indices; the noise component has none
    precision: PrecisionStructure

    @property
    def n_estimated(self) -> int:
        return self.thetas.shape[0]


def edm_log_density(s, theta, lam_t, v: int, noise: bool = False) -> float:
    s = np.asarray(s)
    if noise:
        return -s.size * float(np.log(v))
    theta = np.asarray(theta)
    lam_t = np.broadcast_to(np.asarray(lam_t, dtype=float), s.shape)
    if theta.shape != s.shape:
        raise ValueError("sequence and central sequence lengths differ")
    return -float(lam_t[s != theta].sum()) - log_psi_weighted(lam_t, v)


def component_loglik_matrix(states, params: ComponentParams, v: int) -> np.ndarray:
    """n x G matrix of component log densities (noise column last)."""
    S = np.asarray(states)
    n, T = S.shape
    lam = params.precision.expanded()
    G = lam.shape[0]
    out = np.empty((n, G))
    log_psi = log_psi_rows(lam, v)
    for g in range(params.n_estimated):
        out[:, g] = -((S != params.thetas[g]) @ lam[g]) - log_psi[g]
    if params.precision.noise:
        out[:, -1] = -T * np.log(v)
    return out


def weighted_mode_scores(states, zw, v: int) -> np.ndarray:
    """(G, T, v) array of summed z*w mass per component, time and state."""
    S = np.asarray(states)
    zw = np.asarray(zw, dtype=float)
    scores = np.empty((zw.shape[1], S.shape[1], v))
    for j in range(v):
        scores[:, :, j] = zw.T @ (S == j)
    return scores


def estimate_thetas(states, zw, observed_mask, state_rank=None) -> np.ndarray:
    """Weighted modal sequence of each column of ``zw``.

    Candidates at time t are restricted to the states observed there. Ties
    go to the state with the smallest ``state_rank`` (identity by default).
    """
    observed_mask = np.asarray(observed_mask, dtype=bool)
    v = observed_mask.shape[1]
    zw = np.asarray(zw, dtype=float)
    totals = zw.sum(axis=0)
    if np.any(totals <= 0):
        g = int(np.flatnonzero(totals <= 0)[0])
        raise ValueError(f"component {g + 1} has no responsibility mass")
    scores = weighted_mode_scores(states, zw, v)
    scores = np.where(observed_mask[None], scores, -np.inf)
    best = scores.max(axis=2, keepdims=True)
    tied = scores >= best - _TIE_RTOL * np.abs(best)
    rank = np.arange(v) if state_rank is None else np.asarray(state_rank)
    return np.argmin(np.where(tied, rank[None, None, :], v + 1), axis=2)


def estimate_theta(ds, resp, g: int, state_rank=None) -> np.ndarray:
    zw = np.asarray(resp, dtype=float)[:, [g]] * ds.weights[:, None]
    return estimate_thetas(ds.states, zw, ds.observed_mask, state_rank)[0]


def _closed_form(num, den, v, lambda_max):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    pos = den > 0
    grow = pos & (num > den)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.log(v - 1) + np.log(num - den) - np.log(den)
    out[grow] = np.broadcast_to(lam, out.shape)[grow]
    out = np.where(pos, out, lambda_max)
    return np.clip(out, 0.0, lambda_max)


def mismatch_mass(states, zw, thetas) -> np.ndarray:
    """(G_est, T) summed z*w over observations disagreeing with each centre."""
    S = np.asarray(states)
    zw = np.asarray(zw, dtype=float)
    return np.stack([zw[:, g] @ (S != thetas[g]) for g in range(len(thetas))])


def estimate_precision(
    model_type: str,
    states,
    zw,
    thetas,
    v: int,
    lambda_max: float = DEFAULT_LAMBDA_MAX,
) -> PrecisionStructure:
    """Precision CM-step for any of the eight model types.

    ``zw`` holds responsibilities times weights with the noise column (if
    any) last; only the first ``len(thetas)`` columns enter the update.
    """
    noise = has_noise(model_type)
    kind = precision_kind(model_type)
    thetas = np.asarray(thetas)
    G_est, T = thetas.shape
    zw = np.asarray(zw, dtype=float)[:, :G_est]
    if G_est == 0:
        return PrecisionStructure("scalar", np.float64(0.0), 0, T, noise=True)
    mass = zw.sum(axis=0)
    mis = mismatch_mass(states, zw, thetas)
    if kind == "scalar":
        vals = _closed_form(T * mass.sum(), mis.sum(), v, lambda_max)
    elif kind == "perCluster":
        vals = _closed_form(T * mass, mis.sum(axis=1), v, lambda_max)
    elif kind == "perTime":
        vals = _closed_form(mass.sum(), mis.sum(axis=0), v, lambda_max)
    else:
        vals = _closed_form(mass[:, None], mis, v, lambda_max)
    return PrecisionStructure(kind, vals, G_est, T, noise=noise)

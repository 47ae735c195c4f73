"""Mixing proportions: equal, free, or a multinomial-logit gating network."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

GATING_MODES = ("equal", "free", "covariate")
NOISE_GATINGS = ("GN", "NGN")


class RankDeficientDesignError(ValueError):
    pass


@dataclass(frozen=True)
class GatingConfig:
    mode: str = "free"
    covariates: tuple[str, ...] = ()
    noise_gating: str = "NGN"
    ridge: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.mode not in GATING_MODES:
            raise ValueError(f"unknown gating mode {self.mode!r}")
        if self.noise_gating not in NOISE_GATINGS:
            raise ValueError(f"noise gating must be GN or NGN, got {self.noise_gating!r}")
        if self.mode == "covariate" and not self.covariates:
            raise ValueError("covariate gating needs at least one covariate")
        if self.mode != "covariate" and self.covariates:
            raise ValueError(f"covariates given but gating mode is {self.mode!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def gating_for(covariates=(), noise_gating="NGN", mode=None) -> GatingConfig:
    """Convenience constructor: covariate mode iff covariates are given."""
    covariates = tuple(covariates)
    if mode is None:
        mode = "covariate" if covariates else "free"
    return GatingConfig(mode=mode, covariates=covariates, noise_gating=noise_gating)


@dataclass(frozen=True)
class GatingParams:
    """Fitted gating parameters for G components (noise component last).

    ``beta`` is (r+1) x m with its first column fixed at zero, where m is G,
    or G-1 when the noise probability is the constant ``tau0`` (NGN).
    ``tau`` holds the mixing vector in the equal and free modes.
    """

    mode: str
    G: int
    noise: bool = False
    noise_gating: str = "NGN"
    beta: np.ndarray | None = None
    tau: np.ndarray | None = None
    tau0: float | None = None

    @property
    def gated_noise(self) -> bool:
        return self.noise and self.noise_gating == "GN"


def log_tau(params: GatingParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, G = X.shape[0], params.G
    if params.mode != "covariate":
        return np.broadcast_to(np.log(params.tau), (n, G)).copy()
    beta = np.asarray(params.beta)
    if X.shape[1] != beta.shape[0]:
        raise ValueError(
            f"design has {X.shape[1]} columns, coefficients expect {beta.shape[0]}"
        )
    if params.noise and params.noise_gating == "NGN":
        out = np.empty((n, G))
        out[:, :-1] = np.log1p(-params.tau0) + log_softmax(X @ beta, axis=1)
        out[:, -1] = np.log(params.tau0)
        return out
    return log_softmax(X @ beta, axis=1)


def predict_tau(params: GatingParams, X) -> np.ndarray:
    return np.exp(log_tau(params, X))


def estimate_tau_free(R, w) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = np.asarray(w, dtype=float)
    return (w @ R) / w.sum()


def equal_tau(G: int, noise: bool, tau0: float | None = None) -> np.ndarray:
    if not noise or G == 1:
        return np.full(G, 1.0 / G)
    return np.append(np.full(G - 1, (1.0 - tau0) / (G - 1)), tau0)


def gating_objective(X, R, w, beta) -> float:
    """Weighted multinomial log-likelihood with soft responses."""
    logp = log_softmax(np.asarray(X) @ beta, axis=1)
    terms = np.where(np.asarray(R) > 0, R * logp, 0.0)
    return float(np.asarray(w) @ terms.sum(axis=1))


def check_design(X, w) -> None:
    X = np.asarray(X, dtype=float)
    active = X[np.asarray(w) > 0]
    rank = np.linalg.matrix_rank(active)
    if rank < X.shape[1]:
        raise RankDeficientDesignError(
            f"gating design matrix has rank {rank} < {X.shape[1]} columns"
        )


def fit_mlr(
    X,
    R,
    w,
    beta0=None,
    ridge: float = 1e-8,
    max_iter: int = 100,
    tol: float = 1e-10,
    check_rank: bool = True,
) -> np.ndarray:
    """Weighted multinomial logistic regression on soft responses.

    Newton-Raphson (IRLS) with step halving on the ridge-penalised objective;
    the ridge touches slope coefficients only. Component 1 is the baseline,
    so column 0 of the returned (r+1) x G matrix is zero. The result never
    has a lower unpenalised objective than ``beta0``. Iteration stops once
    the accepted step is below ``tol`` relative to the coefficients, or the
    objective stops moving at rounding level.
    """
    X = np.asarray(X, dtype=float)
    R = np.asarray(R, dtype=float)
    w = np.asarray(w, dtype=float)
    n, p = X.shape
    G = R.shape[1]
    if R.shape[0] != n or w.shape != (n,):
        raise ValueError("design, responses and weights disagree on n")
    if check_rank:
        check_design(X, w)
    start = np.zeros((p, G)) if beta0 is None else np.array(beta0, dtype=float)
    start[:, 0] = 0.0
    if G == 1:
        return start
    m = G - 1
    pen = np.full(p, ridge)
    pen[0] = 0.0

    def penalised(B):
        return gating_objective(X, R, w, B) - 0.5 * float((pen[:, None] * B[:, 1:] ** 2).sum())

    B = start.copy()
    f = penalised(B)
    for _ in range(max_iter):
        P = np.exp(log_softmax(X @ B, axis=1))[:, 1:]
        grad = X.T @ (w[:, None] * (R[:, 1:] - P)) - pen[:, None] * B[:, 1:]
        # curvature blocks: sum_i w_i p_ig (delta_gh - p_ih) x_i x_i'
        Wgh = w[:, None, None] * (
            np.einsum("ig,gh->igh", P, np.eye(m)) - P[:, :, None] * P[:, None, :]
        )
        H = np.einsum("igh,ia,ib->gahb", Wgh, X, X).reshape(m * p, m * p)
        H[np.diag_indices_from(H)] += np.tile(pen, m) + 1e-12
        g = grad.T.reshape(-1)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        step = step.reshape(m, p).T
        t = 1.0
        for _ in range(40):
            cand = B.copy()
            cand[:, 1:] += t * step
            fc = penalised(cand)
            if fc >= f:
                break
            t *= 0.5
        else:
            break
        gain = fc - f
        B, f = cand, fc
        if t * np.abs(step).max() <= tol * (1.0 + np.abs(B).max()):
            break
        if gain <= 1e-15 * (1.0 + abs(f)):
            break
    if gating_objective(X, R, w, B) < gating_objective(X, R, w, start):
        return start
    return B


@dataclass
class CoefficientTable:
    """Gating coefficients against the baseline component.

    ``estimates`` and ``se`` are (terms x components); ``components`` are
    1-based indices of the non-baseline components.
    """

    terms: list[str]
    components: list[int]
    estimates: np.ndarray
    se: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            head = ["component", "label", "term", "estimate"]
            if self.se is not None:
                head.append("se")
            out.writerow(head)
            for j, comp in enumerate(self.components):
                for a, term in enumerate(self.terms):
                    row = [comp, self.labels.get(comp, ""), term,
                           f"{self.estimates[a, j]:.17g}"]
                    if self.se is not None:
                        row.append(f"{self.se[a, j]:.17g}")
                    out.writerow(row)

    def report(self) -> str:
        lines = []
        width = max(len(t) for t in self.terms)
        for j, comp in enumerate(self.components):
            label = self.labels.get(comp, "")
            lines.append(f"component {comp} {label}".rstrip())
            for a, term in enumerate(self.terms):
                cell = f"{self.estimates[a, j]:8.2f}"
                if self.se is not None:
                    cell += f" ({self.se[a, j]:.2f})"
                lines.append(f"  {term:<{width}} {cell}")
        return "\n".join(lines)


def two_step_regress(fit, ds, covariates, response: str = "soft") -> CoefficientTable:
    """Regress fitted cluster memberships on covariates after the fact.

    With a noise component the noise column is dropped and the remaining
    memberships renormalised before building either response.
    """
    if response not in ("soft", "MAP"):
        raise ValueError("response must be 'soft' or 'MAP'")
    Z = np.asarray(fit.Z, dtype=float)
    if fit.noise:
        Z = Z[:, :-1]
        tot = Z.sum(axis=1, keepdims=True)
        Z = np.divide(Z, tot, out=np.full_like(Z, 1.0 / Z.shape[1]), where=tot > 0)
    if response == "MAP":
        labels = Z.argmax(axis=1)
        counts = np.bincount(labels, minlength=Z.shape[1])
        if np.any(counts == 0):
            empty = [int(g) + 1 for g in np.flatnonzero(counts == 0)]
            raise ValueError(f"MAP partition leaves clusters {empty} empty")
        Z = np.eye(Z.shape[1])[labels]
    X = ds.design(covariates)
    beta = fit_mlr(X, Z, ds.weights, ridge=fit.spec.gating.ridge)
    return CoefficientTable(
        terms=["(Intercept)", *ds.design_columns(covariates)],
        components=list(range(2, Z.shape[1] + 1)),
        estimates=beta[:, 1:],
    )

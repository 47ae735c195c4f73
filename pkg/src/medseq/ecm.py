"""ECM estimation of MEDseq mixtures.

Each iteration runs an E-step followed by three conditional maximisations in
a fixed order: gating, central sequences, precisions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .criteria import bic as bic_value
from .criteria import count_params, wasw, wdbs
from .distance import PrecisionStructure, pairwise_matrix
from .edm import (
    DEFAULT_LAMBDA_MAX,
    MODEL_TYPES,
    ComponentParams,
    component_loglik_matrix,
    estimate_precision,
    estimate_thetas,
    has_noise,
)
from .gating import (
    CoefficientTable,
    GatingConfig,
    GatingParams,
    equal_tau,
    estimate_tau_free,
    fit_mlr,
    log_tau,
)
from .initialization import init_partition, weighted_medoid
from .seqdata import (
    SequenceDataset,
    aggregate_duplicates,
    select_covariates,
    sps_encode,
)

__all__ = [
    "Control",
    "ModelSpec",
    "MixtureParams",
    "FittedModel",
    "InadmissibleSpecError",
    "EmptyComponentError",
    "e_step",
    "aitken_check",
    "init_noise",
    "init_partition",
    "fit",
    "restricted_cem",
]

# components whose weighted responsibility mass falls below this fraction of
# the sample size are treated as empty
EMPTY_FRACTION = 1e-10


class InadmissibleSpecError(ValueError):
    pass


class EmptyComponentError(RuntimeError):
    def __init__(self, component: int, iteration: int):
        self.component = component
        self.iteration = iteration
        super().__init__(
            f"component {component} emptied at iteration {iteration}"
        )


@dataclass(frozen=True)
class Control:
    tol: float = 1e-8
    max_iter: int = 1000
    seed: int = 0
    tau0_init: float = 0.05
    lambda_max: float = DEFAULT_LAMBDA_MAX

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.tau0_init < 1:
            raise ValueError(f"tau0_init must lie in (0, 1), got {self.tau0_init}")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")


@dataclass(frozen=True)
class ModelSpec:
    model_type: str
    G: int
    gating: GatingConfig = field(default_factory=GatingConfig)
    control: Control = field(default_factory=Control)

    def __post_init__(self):
        check_admissible(self.model_type, self.G, self.gating)

    @property
    def noise(self) -> bool:
        return has_noise(self.model_type)

    @property
    def n_estimated(self) -> int:
        return self.G - 1 if self.noise else self.G

    def describe(self) -> str:
        g = self.gating
        cov = "+".join(g.covariates) if g.covariates else "-"
        extra = f" {g.noise_gating}" if self.noise and g.mode == "covariate" else ""
        return f"{self.model_type} G={self.G} {g.mode} [{cov}]{extra}"


def check_admissible(model_type: str, G: int, gating: GatingConfig) -> None:
    if model_type not in MODEL_TYPES:
        raise InadmissibleSpecError(f"unknown model type {model_type!r}")
    if int(G) != G or G < 1:
        raise InadmissibleSpecError(f"G must be a positive integer, got {G}")
    if G == 1 and model_type not in ("CC", "CU", "CCN"):
        raise InadmissibleSpecError(
            f"{model_type} with G=1 is not identifiable; only CC, CU and CCN "
            "can be fitted with a single component"
        )
    if G == 2 and model_type in ("UCN", "UUN"):
        alias = {"UCN": "CCN", "UUN": "CUN"}[model_type]
        raise InadmissibleSpecError(
            f"{model_type} with G=2 has a single non-noise component, so it "
            f"is equivalent to {alias}; fit {alias} instead"
        )
    if gating.mode == "covariate":
        noise = has_noise(model_type)
        if noise and gating.noise_gating == "NGN" and G - 1 < 2:
            raise InadmissibleSpecError(
                "gating covariates under NGN need at least 2 non-noise components"
            )
        if G < 2:
            raise InadmissibleSpecError("gating covariates need G >= 2")


@dataclass(frozen=True)
class MixtureParams:
    components: ComponentParams
    gating: GatingParams


def _state_rank(v: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng([seed, 0x7E]).permutation(v)
    rank = np.empty(v, dtype=int)
    rank[perm] = np.arange(v)
    return rank


def e_step(ds: SequenceDataset, params: MixtureParams, X=None):
    """Responsibilities and the weighted pseudo log-likelihood.

    Weights only enter the log-likelihood, never the responsibilities.
    """
    logf = component_loglik_matrix(ds.states, params.components, ds.v)
    if X is None:
        X = np.ones((ds.n, 1))
    with np.errstate(divide="ignore"):
        logf = logf + log_tau(params.gating, X)
    lse = logsumexp(logf, axis=1)
    if not np.all(np.isfinite(lse)):
        bad = int(np.flatnonzero(~np.isfinite(lse))[0])
        raise FloatingPointError(f"non-finite mixture density at row {bad + 1}")
    Z = np.exp(logf - lse[:, None])
    return Z, float(ds.weights @ lse)


def aitken_check(l0: float, l1: float, l2: float | None, tol: float):
    """Aitken-accelerated convergence test on three successive values.

    Compares the extrapolated limit with the newest value. With only two
    values (``l2`` None) the test passes only if they coincide to machine
    slack.
    """
    if l2 is None:
        l0, l1, l2 = np.nan, l0, l1
    slack = 1e-12 * max(1.0, abs(l2))
    if abs(l2 - l1) <= slack:
        return True, float(l2)
    if np.isnan(l0):
        return False, float("nan")
    den = l1 - l0
    if den == 0:
        return False, float("nan")
    a = (l2 - l1) / den
    if a >= 1:
        return False, float("nan")
    l_inf = l1 + (l2 - l1) / (1 - a)
    return bool(abs(l_inf - l2) < tol), float(l_inf)


def init_noise(Z0, tau0_init: float) -> np.ndarray:
    """Scale a (G-1)-column start by 1 - tau0 and append a constant column."""
    if not 0 < tau0_init < 1:
        raise ValueError(f"tau0_init must lie in (0, 1), got {tau0_init}")
    Z0 = np.asarray(Z0, dtype=float)
    n = Z0.shape[0]
    return np.column_stack([Z0 * (1 - tau0_init), np.full(n, tau0_init)])


def _gating_step(Z, w, X, spec: ModelSpec, prev: GatingParams | None) -> GatingParams:
    g = spec.gating
    G, noise = spec.G, spec.noise
    tau0 = float(w @ Z[:, -1] / w.sum()) if noise else None
    common = dict(mode=g.mode, G=G, noise=noise, noise_gating=g.noise_gating)
    if g.mode == "equal":
        return GatingParams(**common, tau=equal_tau(G, noise, tau0), tau0=tau0)
    if g.mode == "free":
        tau = estimate_tau_free(Z, w)
        return GatingParams(**common, tau=tau, tau0=tau0)
    beta0 = None if prev is None else prev.beta
    if noise and g.noise_gating == "NGN":
        R = Z[:, :-1]
        s = R.sum(axis=1)
        R = np.divide(R, s[:, None], out=np.zeros_like(R), where=s[:, None] > 0)
        beta = fit_mlr(X, R, w * s, beta0=beta0, ridge=g.ridge, check_rank=prev is None)
        return GatingParams(**common, beta=beta, tau0=tau0)
    beta = fit_mlr(X, Z, w, beta0=beta0, ridge=g.ridge, check_rank=prev is None)
    return GatingParams(**common, beta=beta)


def m_step(ds, Z, X, spec: ModelSpec, state_rank, prev=None) -> MixtureParams:
    w = ds.weights
    gating = _gating_step(Z, w, X, spec, None if prev is None else prev.gating)
    zw = Z * w[:, None]
    G_est = spec.n_estimated
    if G_est:
        thetas = estimate_thetas(ds.states, zw[:, :G_est], ds.observed_mask, state_rank)
    else:
        thetas = np.zeros((0, ds.T), dtype=int)
    precision = estimate_precision(
        spec.model_type, ds.states, zw, thetas, ds.v, spec.control.lambda_max
    )
    return MixtureParams(ComponentParams(thetas, precision), gating)


def _unique_sequences(ds: SequenceDataset):
    uniq, inverse = np.unique(ds.states, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    w = np.bincount(inverse, weights=ds.weights, minlength=len(uniq))
    return uniq, inverse, w


def initial_labels(ds: SequenceDataset, k: int, seed: int = 0) -> np.ndarray:
    """Ward + weighted PAM start on the distinct sequences of ``ds``."""
    uniq, inverse, w = _unique_sequences(ds)
    if k > len(uniq):
        raise InadmissibleSpecError(
            f"cannot initialise {k} components from {len(uniq)} distinct sequences"
        )
    labels = init_partition(pairwise_matrix(uniq), w, k, seed=seed)
    return labels[inverse]


def _initial_z(ds, spec: ModelSpec, labels=None) -> np.ndarray:
    G_est = spec.n_estimated
    if G_est == 0:
        return np.ones((ds.n, 1))
    if labels is None:
        labels = initial_labels(ds, G_est, spec.control.seed)
    labels = np.asarray(labels)
    if labels.shape != (ds.n,) or labels.min() < 0 or labels.max() >= G_est:
        raise ValueError(f"initial labels must be n integers in [0, {G_est})")
    Z = np.eye(G_est)[labels]
    if spec.noise:
        Z = init_noise(Z, spec.control.tau0_init)
    return Z


def _active(ds: SequenceDataset, spec: ModelSpec) -> SequenceDataset:
    g = spec.gating
    return select_covariates(ds, g.covariates if g.mode == "covariate" else ())


def _collapse_rows(values, amap, n_unique):
    values = np.asarray(values, dtype=float)
    counts = np.bincount(amap.unique_index_of, minlength=n_unique)
    out = np.zeros((n_unique,) + values.shape[1:])
    np.add.at(out, amap.unique_index_of, values)
    return out / counts.reshape((-1,) + (1,) * (values.ndim - 1))


@dataclass
class FittedModel:
    spec: ModelSpec
    params: MixtureParams
    Z: np.ndarray
    map: np.ndarray
    loglik_trace: list
    loglik: float
    bic: float
    n_params: int
    iterations: int
    converged: bool
    wdbs: float | None = None
    wasw: float | None = None
    labels: list = field(default_factory=list)
    design_columns: list = field(default_factory=list)
    alphabet: tuple = ()
    time_labels: tuple = ()
    ids: tuple = ()
    n_units: int = 0

    @property
    def noise(self) -> bool:
        return self.spec.noise

    @property
    def G(self) -> int:
        return self.spec.G

    def theta_labels(self) -> list[list[str]]:
        return [[self.alphabet[int(s)] for s in row] for row in self.params.components.thetas]

    def coefficients(self, se=None) -> CoefficientTable:
        """Gating coefficients against component 1."""
        gp = self.params.gating
        if gp.mode != "covariate":
            raise ValueError("model has no gating covariates")
        m = gp.beta.shape[1]
        comps = list(range(2, m + 1))
        return CoefficientTable(
            terms=["(Intercept)", *self.design_columns],
            components=comps,
            estimates=gp.beta[:, 1:],
            se=se,
            labels={c: self.labels[c - 1] for c in comps},
        )

    def summary(self) -> str:
        lines = [
            f"model      {self.spec.describe()}",
            f"loglik     {self.loglik:.4f}",
            f"params     {self.n_params}",
            f"BIC        {self.bic:.4f}",
            f"iterations {self.iterations} (converged: {self.converged})",
        ]
        if self.wdbs is not None:
            lines.append(f"wDBS       {self.wdbs:.4f}")
        if self.wasw is not None:
            lines.append(f"wASW       {self.wasw:.4f}")
        sizes = np.bincount(self.map, minlength=self.G)
        for g, lab in enumerate(self.labels):
            lines.append(f"  {g + 1:>2} n={sizes[g]:<4d} {lab}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        comp = self.params.components
        gp = self.params.gating
        spec = self.spec
        return {
            "model_type": spec.model_type,
            "G": spec.G,
            "gating": {
                "mode": spec.gating.mode,
                "covariates": list(spec.gating.covariates),
                "noise_gating": spec.gating.noise_gating,
                "ridge": spec.gating.ridge,
            },
            "control": asdict(spec.control),
            "alphabet": list(self.alphabet),
            "time_labels": list(self.time_labels),
            "theta": self.theta_labels(),
            "labels": list(self.labels),
            "precision": {
                "kind": comp.precision.kind,
                "values": np.asarray(comp.precision.values).tolist(),
            },
            "beta": None if gp.beta is None else np.asarray(gp.beta).tolist(),
            "design_columns": list(self.design_columns),
            "tau": None if gp.tau is None else np.asarray(gp.tau).tolist(),
            "tau0": gp.tau0,
            "loglik": self.loglik,
            "loglik_trace": list(self.loglik_trace),
            "n_params": self.n_params,
            "bic": self.bic,
            "wdbs": self.wdbs,
            "wasw": self.wasw,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_units": self.n_units,
            "map": [int(g) + 1 for g in self.map],
        }

    def to_json(self, path=None) -> str:
        # json writes floats with repr, which round-trips exactly
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_z_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            head = [f"z{g + 1}" for g in range(self.G)]
            out.writerow(["id", *head, "map"])
            ids = self.ids or tuple(str(i + 1) for i in range(len(self.Z)))
            for i, row in zip(ids, self.Z):
                out.writerow([i, *(f"{z:.17g}" for z in row), int(np.argmax(row)) + 1])


def model_from_dict(doc: dict, ds: SequenceDataset, distance_matrix=None) -> FittedModel:
    """Rebuild a fitted model, recomputing responsibilities and diagnostics."""
    gating = GatingConfig(
        mode=doc["gating"]["mode"],
        covariates=tuple(doc["gating"]["covariates"]),
        noise_gating=doc["gating"]["noise_gating"],
        ridge=doc["gating"]["ridge"],
    )
    spec = ModelSpec(doc["model_type"], doc["G"], gating, Control(**doc["control"]))
    if list(ds.alphabet.labels) != doc["alphabet"]:
        raise ValueError("dataset alphabet differs from the stored model")
    thetas = np.array(
        [ds.alphabet.encode(row) for row in doc["theta"]], dtype=int
    ).reshape(len(doc["theta"]), ds.T)
    prec = PrecisionStructure(
        doc["precision"]["kind"],
        np.array(doc["precision"]["values"], dtype=float),
        spec.n_estimated,
        ds.T,
        noise=spec.noise,
    )
    gp = GatingParams(
        mode=gating.mode,
        G=spec.G,
        noise=spec.noise,
        noise_gating=gating.noise_gating,
        beta=None if doc["beta"] is None else np.array(doc["beta"], dtype=float),
        tau=None if doc["tau"] is None else np.array(doc["tau"], dtype=float),
        tau0=doc["tau0"],
    )
    params = MixtureParams(ComponentParams(thetas, prec), gp)
    active = _active(ds, spec)
    Z, ll = e_step(active, params, active.design(gating.covariates))
    model = _finish(
        ds, spec, params, Z, list(doc["loglik_trace"]), doc["iterations"],
        doc["converged"], distance_matrix, diagnostics=True,
    )
    model.loglik = ll
    return model


def load_model(path, ds: SequenceDataset, distance_matrix=None) -> FittedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh), ds, distance_matrix)


def _finish(ds, spec, params, Z, trace, iterations, converged, D, diagnostics):
    k = count_params(
        spec.model_type,
        spec.G,
        ds.v_t,
        spec.gating.mode,
        1 + len(ds.design_columns(spec.gating.covariates)),
        spec.gating.noise_gating,
    )
    loglik = float(max(trace)) if trace else float("nan")
    labels_map = np.argmax(Z, axis=1)
    sps = [sps_encode(th, ds.alphabet) for th in params.components.thetas]
    if spec.noise:
        sps.append("Noise")
    model = FittedModel(
        spec=spec,
        params=params,
        Z=Z,
        map=labels_map,
        loglik_trace=list(trace),
        loglik=loglik,
        bic=float(bic_value(loglik, k, ds.n_units)),
        n_params=k,
        iterations=iterations,
        converged=converged,
        labels=sps,
        design_columns=ds.design_columns(spec.gating.covariates),
        alphabet=ds.alphabet.labels,
        time_labels=ds.time_labels,
        ids=ds.ids,
        n_units=ds.n_units,
    )
    if diagnostics and spec.G >= 2:
        model.wdbs = wdbs(Z, ds.weights)
        if len(np.unique(labels_map)) >= 2:
            if D is None:
                D = pairwise_matrix(ds.states)
            model.wasw = wasw(D, labels_map, ds.weights)
    return model


def fit(
    ds: SequenceDataset,
    spec: ModelSpec,
    aggregate: bool = True,
    init_z=None,
    init_labels=None,
    distance_matrix=None,
    diagnostics: bool = True,
) -> FittedModel:
    """Fit a MEDseq mixture by ECM.

    Parameters
    ----------
    ds : SequenceDataset
        Data; covariates not named in ``spec.gating`` are ignored.
    spec : ModelSpec
        Model type, number of components, gating and control settings.
    aggregate : bool
        Fit on duplicate-aggregated rows (identical results, less work).
    init_z : array, optional
        n x G starting responsibilities for the raw rows. Overrides the
        default Ward + weighted PAM start.
    init_labels : array, optional
        Hard starting labels in ``[0, G_est)`` for the raw rows.
    distance_matrix : array, optional
        Precomputed Hamming matrix of the raw rows, used for wASW.
    diagnostics : bool
        Compute wDBS and wASW.

    Returns
    -------
    FittedModel
        Parameters at the highest pseudo log-likelihood reached, with
        responsibilities for the raw rows.
    """
    ctl = spec.control
    full = _active(ds, spec)
    if aggregate:
        work, amap = aggregate_duplicates(full, include_covariates=True)
    else:
        work, amap = full, None
    X = work.design(spec.gating.covariates)
    if init_z is None and init_labels is not None:
        init_z = _initial_z(full, spec, init_labels)
    if init_z is not None:
        Z = np.asarray(init_z, dtype=float)
        if Z.shape != (ds.n, spec.G):
            raise ValueError(f"init_z must have shape ({ds.n}, {spec.G})")
        if amap is not None:
            # duplicates given different starts share their average
            Z = _collapse_rows(Z, amap, work.n)
    else:
        Z = _initial_z(work, spec)

    rank = _state_rank(ds.v, ctl.seed)
    floor = EMPTY_FRACTION * work.n_units
    G_est = spec.n_estimated

    def check_mass(Z, iteration):
        mass = work.weights @ Z[:, :G_est]
        if np.any(mass < floor):
            raise EmptyComponentError(int(np.argmax(mass < floor)) + 1, iteration)

    check_mass(Z, 0)
    params = m_step(work, Z, X, spec, rank)
    trace: list[float] = []
    best = None
    converged = False
    it = 0
    for it in range(1, ctl.max_iter + 1):
        Z, ll = e_step(work, params, X)
        trace.append(ll)
        if best is None or ll > best[2]:
            best = (params, Z, ll)
        if len(trace) >= 2:
            prev2 = trace[-3] if len(trace) >= 3 else None
            if prev2 is None:
                done, _ = aitken_check(trace[-2], trace[-1], None, ctl.tol)
            else:
                done, _ = aitken_check(prev2, trace[-2], trace[-1], ctl.tol)
            if done:
                converged = True
                break
        if it == ctl.max_iter:
            break
        check_mass(Z, it)
        params = m_step(work, Z, X, spec, rank, prev=params)
    params, Z, _ = best
    if amap is not None:
        Z = amap.expand(Z)
    return _finish(
        full, spec, params, Z, trace, it, converged, distance_matrix, diagnostics
    )


def restricted_cem(ds: SequenceDataset, medoids, max_iter: int = 100):
    """Hard-classification ECM with unit precision, equal mixing proportions
    and central sequences restricted to observed sequences (weighted medoids).

    Starting from ``medoids`` (row indices), returns (labels, medoids).
    """
    medoids = np.array(medoids, dtype=int)
    G = len(medoids)
    D = pairwise_matrix(ds.states)
    w = ds.weights
    gating = GatingParams(mode="equal", G=G, tau=equal_tau(G, False))
    labels = None
    for _ in range(max_iter):
        comp = ComponentParams(
            ds.states[medoids].astype(int),
            PrecisionStructure("scalar", np.float64(1.0), G, ds.T),
        )
        Z, _ = e_step(ds, MixtureParams(comp, gating))
        new_labels = np.argmax(Z, axis=1)
        new_medoids = medoids.copy()
        for g in range(G):
            members = np.flatnonzero(new_labels == g)
            if members.size == 0:
                raise EmptyComponentError(g + 1, _ + 1)
            cand = weighted_medoid(D, w, members)
            cost = w[members] @ D[np.ix_(members, [cand, medoids[g]])]
            if cost[0] < cost[1]:
                new_medoids[g] = cand
        if labels is not None and np.array_equal(new_labels, labels) and np.array_equal(
            new_medoids, medoids
        ):
            break
        labels, medoids = new_labels, new_medoids
    return labels, medoids

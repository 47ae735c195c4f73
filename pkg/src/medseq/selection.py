"""Model search: exhaustive grids over (type, G) and greedy bi-directional
stepwise search over components and gating covariates, both driven by BIC."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .criteria import bic, count_params, dbs, wasw, wdbs
from .distance import pairwise_matrix
from .ecm import (
    Control,
    EmptyComponentError,
    FittedModel,
    InadmissibleSpecError,
    ModelSpec,
    check_admissible,
    fit,
    initial_labels,
)
from .edm import MODEL_TYPES, has_noise
from .gating import GatingConfig, RankDeficientDesignError
from .seqdata import SequenceDataset

__all__ = [
    "bic",
    "count_params",
    "dbs",
    "wdbs",
    "wasw",
    "FitCache",
    "GridResult",
    "grid_search",
    "StepwiseTrace",
    "stepwise",
]

_FIT_ERRORS = (
    EmptyComponentError,
    InadmissibleSpecError,
    RankDeficientDesignError,
    FloatingPointError,
    np.linalg.LinAlgError,
    ValueError,
)


def spec_key(spec: ModelSpec) -> tuple:
    g = spec.gating
    ng = g.noise_gating if spec.noise and g.mode == "covariate" else ""
    return (spec.model_type, spec.G, g.mode, tuple(g.covariates), ng)


class FitCache:
    """Memoised fits and starting partitions for one dataset.

    Starting partitions depend only on the number of non-noise components,
    so they are shared across model types and gating settings.
    """

    def __init__(self, ds: SequenceDataset, control: Control, workers: int = 1):
        self.ds = ds
        self.control = control
        self.workers = max(1, int(workers))
        self.D = pairwise_matrix(ds.states)
        self._labels: dict[int, np.ndarray] = {}
        self._fits: dict[tuple, FittedModel | str] = {}

    def labels(self, k: int) -> np.ndarray:
        if k not in self._labels:
            self._labels[k] = initial_labels(self.ds, k, self.control.seed)
        return self._labels[k]

    def _run(self, spec: ModelSpec):
        try:
            k = spec.n_estimated
            labels = self.labels(k) if k > 0 else None
            return fit(self.ds, spec, init_labels=labels, distance_matrix=self.D)
        except _FIT_ERRORS as exc:
            return f"{type(exc).__name__}: {exc}"

    def fit_many(self, specs) -> list:
        """Fit each spec (cached), returning results in input order."""
        todo = []
        for s in specs:
            key = spec_key(s)
            if key not in self._fits and key not in {spec_key(t) for t in todo}:
                todo.append(s)
        # partitions are computed up front so worker threads only read them
        for s in todo:
            if 0 < s.n_estimated and s.n_estimated not in self._labels:
                try:
                    self.labels(s.n_estimated)
                except InadmissibleSpecError:
                    pass
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                results = list(pool.map(self._run, todo))
        else:
            results = [self._run(s) for s in todo]
        for s, r in zip(todo, results):
            self._fits[spec_key(s)] = r
        return [self._fits[spec_key(s)] for s in specs]


def _bic_of(result) -> float:
    return result.bic if isinstance(result, FittedModel) else -math.inf


def _rank_key(result, name: str = ""):
    """Sort key: higher BIC first, then fewer parameters, then name."""
    if not isinstance(result, FittedModel):
        return (math.inf, math.inf, name)
    return (-result.bic, result.n_params, name)


@dataclass
class GridResult:
    rows: list[dict]
    best: FittedModel | None
    fits: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        cols = ["model_type", "G", "gating", "covariates", "noise_gating",
                "loglik", "n_params", "bic", "iterations", "converged", "error"]
        with open(path, "w", newline="") as fh:
            out = csv.DictWriter(fh, fieldnames=cols)
            out.writeheader()
            for row in self.rows:
                out.writerow({c: _fmt(row.get(c, "")) for c in cols})


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return x


def _grid_gating(model_type, G, gating: GatingConfig) -> GatingConfig:
    """Drop covariates when they are not admissible for (type, G)."""
    if gating.mode != "covariate":
        return gating
    try:
        check_admissible(model_type, G, gating)
        return gating
    except InadmissibleSpecError:
        return GatingConfig(mode="free", noise_gating=gating.noise_gating,
                            ridge=gating.ridge)


def grid_search(
    ds: SequenceDataset,
    types=MODEL_TYPES,
    G_range=range(1, 10),
    gating: GatingConfig | None = None,
    control: Control | None = None,
    workers: int = 1,
    cache: FitCache | None = None,
) -> GridResult:
    """Fit every admissible (type, G) pair and keep the best by BIC.

    Pairs that are not identifiable (G=1 other than CC/CU/CCN, G=2 for
    UCN/UUN) are skipped. Where the gating covariates are not admissible
    the pair is fitted with free mixing proportions instead. Failed fits
    are recorded in the table rather than raised.
    """
    gating = gating or GatingConfig()
    control = control or Control()
    cache = cache or FitCache(ds, control, workers)
    specs = []
    for G in G_range:
        for t in types:
            g = _grid_gating(t, G, gating)
            try:
                specs.append(ModelSpec(t, G, g, control))
            except InadmissibleSpecError:
                continue
    results = cache.fit_many(specs)
    rows, fits = [], {}
    for s, r in zip(specs, results):
        row = {
            "model_type": s.model_type,
            "G": s.G,
            "gating": s.gating.mode,
            "covariates": "+".join(s.gating.covariates),
            "noise_gating": spec_key(s)[4],
        }
        if isinstance(r, FittedModel):
            row.update(loglik=r.loglik, n_params=r.n_params, bic=r.bic,
                       iterations=r.iterations, converged=r.converged, error="")
        else:
            row.update(error=r)
        rows.append(row)
        fits[spec_key(s)] = r
    ok = [(s, r) for s, r in zip(specs, results) if isinstance(r, FittedModel)]
    best = min(ok, key=lambda sr: _rank_key(sr[1], sr[0].describe()))[1] if ok else None
    return GridResult(rows, best, fits)


@dataclass
class StepRecord:
    step: int
    action: str
    spec: str
    model_type: str
    G: int
    covariates: tuple
    noise_gating: str
    bic: float
    n_params: int | None
    n_candidates: int
    accepted: bool


@dataclass
class StepwiseTrace:
    start_bic: float
    steps: list[StepRecord]
    final: FittedModel

    @property
    def final_bic(self) -> float:
        return self.final.bic

    @property
    def accepted(self) -> list[StepRecord]:
        return [r for r in self.steps if r.accepted]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "action", "G", "model_type", "covariates",
                          "noise_gating", "bic", "n_params", "n_candidates",
                          "accepted"])
            for r in self.steps:
                out.writerow([r.step, r.action, r.G, r.model_type,
                              "+".join(r.covariates), r.noise_gating,
                              _fmt(r.bic), "" if r.n_params is None else r.n_params,
                              r.n_candidates, r.accepted])


def _candidate_specs(K, covs, ng_options, control, ridge):
    """Every model type (and noise gating) with K non-noise components."""
    out = []
    for t in MODEL_TYPES:
        G = K + 1 if has_noise(t) else K
        if covs:
            ngs = ng_options if has_noise(t) else ("NGN",)
            gatings = [GatingConfig("covariate", covs, ng, ridge) for ng in ngs]
        else:
            gatings = [GatingConfig("free", (), "NGN", ridge)]
        for g in gatings:
            try:
                out.append(ModelSpec(t, G, g, control))
            except InadmissibleSpecError:
                pass
    return out


def stepwise(
    ds: SequenceDataset,
    start: FittedModel,
    candidate_covariates=None,
    direction: str = "forward",
    max_steps: int = 50,
    workers: int = 1,
    cache: FitCache | None = None,
) -> StepwiseTrace:
    """Greedy bi-directional search from ``start``.

    Each step considers adding or removing a gating covariate and adding or
    removing a non-noise component; every action is evaluated over all
    model types (and GN/NGN where a noise component and covariates
    coexist). The action with the largest BIC gain is taken; ties go to
    fewer parameters and then the action name. ``direction`` only labels
    the trace, as both kinds of move are always considered.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    control = start.spec.control
    ridge = start.spec.gating.ridge
    names = list(ds.covariate_names if candidate_covariates is None else candidate_covariates)
    for c in names:
        if c not in ds.covariate_groups:
            raise KeyError(f"unknown covariate {c!r}")
    order = {c: i for i, c in enumerate(names)}
    cache = cache or FitCache(ds, control, workers)
    current = start
    steps = [_record(0, "start", current, 1, True)]
    for step in range(1, max_steps + 1):
        K = current.spec.n_estimated
        covs = tuple(current.spec.gating.covariates)
        actions = []
        for c in names:
            if c in covs:
                rest = tuple(x for x in covs if x != c)
                actions.append((f"remove {c}", K, rest))
            else:
                new = tuple(sorted(covs + (c,), key=lambda x: order.get(x, len(order))))
                actions.append((f"add {c}", K, new))
        actions.append(("add component", K + 1, covs))
        if K > 1:
            actions.append(("remove component", K - 1, covs))
        evaluated = []
        for name, k, cv in actions:
            specs = _candidate_specs(k, cv, ("GN", "NGN"), control, ridge)
            if not specs:
                continue
            results = cache.fit_many(specs)
            best = min(results, key=lambda r: _rank_key(r))
            evaluated.append((name, best, len(specs)))
        evaluated.sort(key=lambda e: _rank_key(e[1], e[0]))
        chosen = None
        if evaluated and isinstance(evaluated[0][1], FittedModel):
            if evaluated[0][1].bic > current.bic:
                chosen = evaluated[0]
        for name, res, n_c in evaluated:
            steps.append(_record(step, name, res, n_c, chosen is not None and name == chosen[0]))
        if chosen is None:
            break
        current = chosen[1]
    return StepwiseTrace(start.bic, steps, current)


def _record(step, action, res, n_candidates, accepted) -> StepRecord:
    if not isinstance(res, FittedModel):
        return StepRecord(step, action, "", "", 0, (), "", -math.inf, None,
                          n_candidates, False)
    s = res.spec
    return StepRecord(
        step=step,
        action=action,
        spec=s.describe(),
        model_type=s.model_type,
        G=s.G,
        covariates=tuple(s.gating.covariates),
        noise_gating=s.gating.noise_gating if s.noise and s.gating.covariates else "",
        bic=res.bic,
        n_params=res.n_params,
        n_candidates=n_candidates,
        accepted=accepted,
    )

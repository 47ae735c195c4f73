"""Weighted likelihood bootstrap standard errors for gating parameters."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ecm import FittedModel, fit
from .gating import CoefficientTable
from .seqdata import SequenceDataset
from .selection import _FIT_ERRORS


@dataclass
class BootstrapResult:
    """Replicate draws of the gating coefficients.

    ``draws`` is B x terms x components; rows of failed replicates are NaN
    and excluded from ``se``. Standard errors are approximate.
    """

    B: int
    draws: np.ndarray
    se: np.ndarray
    failed: list[int]
    estimates: np.ndarray
    terms: list[str]
    components: list[int]
    labels: dict = field(default_factory=dict)

    def table(self) -> CoefficientTable:
        return CoefficientTable(self.terms, self.components, self.estimates,
                                self.se, self.labels)

    def write_csv(self, path) -> None:
        self.table().write_csv(path)


def gating_estimates(model: FittedModel):
    """(terms, components, estimates) of a fit's gating parameters.

    Covariate gating reports the coefficients against component 1; free
    mixing proportions are reported as log(tau_g / tau_1).
    """
    gp = model.params.gating
    if gp.mode == "covariate":
        t = model.coefficients()
        return t.terms, t.components, t.estimates
    if gp.mode == "free":
        with np.errstate(divide="ignore"):
            lt = np.log(gp.tau)
        return ["log(tau_g/tau_1)"], list(range(2, model.G + 1)), (lt[1:] - lt[0])[None, :]
    raise ValueError("equal mixing proportions have no gating parameters to bootstrap")


def replicate_weights(w, seed: int, b: int) -> np.ndarray:
    """w * (n u) with u ~ Dirichlet(1, ..., 1), reproducible per replicate."""
    w = np.asarray(w, dtype=float)
    e = np.random.default_rng([seed, b]).standard_exponential(len(w))
    return w * (len(w) * (e / e.sum()))


def wlbs_se(
    model: FittedModel,
    ds: SequenceDataset,
    B: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> BootstrapResult:
    """Refit ``model`` under Dirichlet-perturbed weights, starting each
    replicate from the original responsibilities, and take the standard
    deviation of the gating parameters across replicates."""
    if B < 2:
        raise ValueError("B must be at least 2")
    terms, comps, est = gating_estimates(model)

    def one(b):
        ds_b = ds.with_weights(replicate_weights(ds.weights, seed, b))
        try:
            refit = fit(ds_b, model.spec, init_z=model.Z, diagnostics=False)
        except _FIT_ERRORS:
            return None
        if not refit.converged:
            return None
        return gating_estimates(refit)[2]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    draws = np.full((B,) + est.shape, np.nan)
    failed = []
    for b, r in enumerate(results):
        if r is None:
            failed.append(b)
        else:
            draws[b] = r
    if B - len(failed) < 2:
        raise RuntimeError(f"only {B - len(failed)} of {B} bootstrap replicates succeeded")
    ok = np.delete(draws, failed, axis=0)
    se = ok.std(axis=0, ddof=1)
    labels = {c: model.labels[c - 1] for c in comps}
    return BootstrapResult(B, draws, se, failed, est, terms, comps, labels)

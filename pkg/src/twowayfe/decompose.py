"""Variance decompositions of log wages into worker, firm, sorting, and
residual components.

All moments are person-year weighted (each observation counts once) with
population denominators, so the plug-in decomposition is exactly additive:

    Var(Y - X beta) = Var(alpha_i) + Var(psi_{j(it)})
                      + 2 Cov(alpha_i, psi_{j(it)}) + Var(resid)

The firm effect enters evaluated at the realized match, so the covariance
term measures sorting: it is zero when matching is unrelated to the effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .panel import Panel
from .solver import Estimates

FLAVORS = ("plug_in", "homoskedastic_corrected", "leave_out_corrected", "ground_truth")

CORE_COMPONENTS = ("var_alpha", "var_psi", "cov2", "var_resid")


def _pvar(x: np.ndarray) -> float:
    return float(np.var(x))


def _pcov(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - a.mean()) * (b - b.mean())))


@dataclass(frozen=True)
class Decomposition:
    """Named variance components, their shares of the total, and provenance tags."""

    total: float
    components: dict
    shares: dict
    flavor: str
    weighting: str = "person_year"
    corr_alpha_psi: float = float("nan")

    @classmethod
    def from_components(cls, components: dict, flavor: str = "plug_in",
                        corr_alpha_psi: float = float("nan")) -> "Decomposition":
        """Build a decomposition from raw component values; the total is their sum."""
        total = float(sum(components.values()))
        shares = {k: v / total for k, v in components.items()} if total else {}
        return cls(
            total=total,
            components=dict(components),
            shares=shares,
            flavor=flavor,
            corr_alpha_psi=corr_alpha_psi,
        )

    def to_json_dict(self) -> dict:
        out = {
            "schema_version": 1,
            "total": self.total,
            "flavor": self.flavor,
            "weighting": self.weighting,
            "shares": dict(self.shares),
            "corr_alpha_psi": self.corr_alpha_psi,
        }
        out.update(self.components)
        return out


@dataclass(frozen=True)
class BetweenWithinSplit:
    between_firm_variance: float
    within_firm_variance: float

    @property
    def total(self) -> float:
        return self.between_firm_variance + self.within_firm_variance


def decompose_variance(panel: Panel, estimates: Estimates, include_covariates: bool = False) -> Decomposition:
    """Plug-in decomposition of wage variance on the estimation panel.

    With include_covariates=False the object decomposed is Var(Y - X beta);
    with True it is Var(Y), adding the covariate-index variance and its two
    covariance terms. Residual orthogonality from the solver guarantees the
    components sum to the total up to rounding.
    """
    if estimates.panel.n_obs != panel.n_obs or not np.array_equal(
        estimates.panel.log_wage, panel.log_wage
    ):
        raise DataError("estimates were not computed on this panel")

    a = estimates.alpha_obs()
    p = estimates.psi_obs()
    e = estimates.residuals
    xb = estimates.xb_obs()

    components = {
        "var_alpha": _pvar(a),
        "var_psi": _pvar(p),
        "cov2": 2.0 * _pcov(a, p),
        "var_resid": _pvar(e),
    }
    if include_covariates:
        components["var_xb"] = _pvar(xb)
        components["cov_xb_alpha2"] = 2.0 * _pcov(xb, a)
        components["cov_xb_psi2"] = 2.0 * _pcov(xb, p)
        total = _pvar(panel.log_wage)
    else:
        total = _pvar(panel.log_wage - xb)

    shares = {k: v / total for k, v in components.items()} if total else {}
    sd = np.sqrt(components["var_alpha"] * components["var_psi"])
    corr = 0.5 * components["cov2"] / sd if sd > 0 else float("nan")
    return Decomposition(
        total=total,
        components=components,
        shares=shares,
        flavor="plug_in",
        corr_alpha_psi=float(corr),
    )


def between_within_split(panel: Panel, estimates: Estimates | None = None) -> BetweenWithinSplit:
    """Person-year-weighted ANOVA split of wage variance by firm.

    Decomposes Var(Y), or Var(Y - X beta) when estimates are supplied, into
    the variance of firm means plus the mean within-firm variance.
    """
    y = panel.log_wage
    if estimates is not None:
        if estimates.panel.n_obs != panel.n_obs:
            raise DataError("estimates were not computed on this panel")
        y = y - estimates.xb_obs()
    firm_sums = np.bincount(panel.firm_idx, weights=y, minlength=panel.n_firms)
    firm_counts = np.bincount(panel.firm_idx, minlength=panel.n_firms)
    firm_means = firm_sums / np.maximum(firm_counts, 1)
    mean_obs = firm_means[panel.firm_idx]
    between = _pvar(mean_obs)
    within = float(np.mean((y - mean_obs) ** 2))
    return BetweenWithinSplit(between_firm_variance=between, within_firm_variance=within)


@dataclass(frozen=True)
class ChangeTable:
    """Per-component change between two decompositions."""

    changes: dict
    total_change: float
    shares_of_change: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "total_change": self.total_change,
            "changes": dict(self.changes),
            "shares_of_change": dict(self.shares_of_change),
        }


def compare_decompositions(a: Decomposition, b: Decomposition) -> ChangeTable:
    """Component-by-component change from `a` to `b` and each component's
    share of the total change."""
    if set(a.components) != set(b.components):
        raise DataError(
            f"component sets differ: {sorted(a.components)} vs {sorted(b.components)}"
        )
    changes = {k: b.components[k] - a.components[k] for k in a.components}
    total_change = b.total - a.total
    if total_change != 0.0:
        shares = {k: v / total_change for k, v in changes.items()}
    else:
        shares = {k: float("nan") if v else 0.0 for k, v in changes.items()}
    return ChangeTable(changes=changes, total_change=total_change, shares_of_change=shares)

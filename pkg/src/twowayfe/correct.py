"""Bias corrections for plug-in variance components.

Estimated effects carry noise, and noise does not average out of variances
and covariances: the plug-in firm-effect variance is biased upward and the
worker-firm covariance downward, most severely when firms have few movers.
Writing each component as a quadratic form phi' A phi in the stacked
identified parameter vector, the sampling bias of the plug-in is

    E[phihat' A phihat] - phi' A phi = trace(A S^{-1} D' Omega D S^{-1})

with S = D'D and Omega the diagonal noise covariance. Two corrections:

homoskedastic_trace : Omega = sigma^2 I collapses the bias to
    sigma^2 trace(A S^{-1}); plug in sigma2hat = RSS / dof.
leave_out : allows unrestricted per-observation variances. The bias equals
    sum_o B_oo sigma_o^2 with B_oo = x_o' S^{-1} A S^{-1} x_o, and
    sigma_o^2 is estimated without bias by y_o * resid_o / (1 - P_oo), the
    leave-one-out residual product. Requires every leverage P_oo < 1, i.e. a
    leave-one-out connected estimation set.

Each correction runs on an exact backend (dense Schur-complement
factorization of S, deterministic) or a stochastic one (Rademacher probes,
conjugate-gradient solves) for scale. Quadratic-form matrices are never
materialized; components act through centered selector maps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .decompose import Decomposition, decompose_variance
from .design import Design
from .errors import ConfigError, DataError
from .network import ConnectedSet
from .panel import Panel, restrict_panel
from .solver import Estimates

COMPONENTS = {
    "var_alpha": ("alpha", "alpha"),
    "var_psi": ("psi", "psi"),
    "cov_alpha_psi": ("alpha", "psi"),
    "var_alpha_plus_psi": ("alpha_plus_psi", "alpha_plus_psi"),
}

BACKENDS = ("exact", "stochastic")

LEVERAGE_CAP = 1.0 - 1e-10
DEFAULT_PROBES = 100
DEFAULT_CG_TOL = 1e-8


@dataclass(frozen=True)
class QuadraticForm:
    """Matrix-free symmetric form A with phi' A phi equal to one person-year
    weighted variance component evaluated at stacked parameters."""

    component: str
    design: Design

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ConfigError(f"unknown component {self.component!r}")

    @property
    def blocks(self) -> tuple:
        return COMPONENTS[self.component]

    def _centered_values(self, phi: np.ndarray, block: str) -> np.ndarray:
        v = self.design.obs_values(phi, block)
        return v - v.mean(axis=0)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """A @ phi (symmetrized)."""
        left, right = self.blocks
        n = self.design.n
        out = self.design.scatter_obs(self._centered_values(phi, right), left)
        if left != right:
            out = out + self.design.scatter_obs(self._centered_values(phi, left), right)
            return out / (2.0 * n)
        return out / n

    def quad(self, phi: np.ndarray) -> float:
        """phi' A phi: the plug-in component value."""
        left, right = self.blocks
        lv = self._centered_values(phi, left)
        rv = lv if left == right else self._centered_values(phi, right)
        return float(lv @ rv) / self.design.n

    def scatter_T(self, z: np.ndarray, side: str) -> np.ndarray:
        """Adjoint of the (centered) left or right observation map."""
        block = self.blocks[0 if side == "left" else 1]
        return self.design.scatter_obs(z - z.mean(axis=0), block)


@dataclass(frozen=True)
class CorrectionResult:
    component: str
    plug_in: float
    correction: float
    corrected: float
    method: str
    backend: str
    probes_used: int = 0
    seed: int | None = None
    mc_stderr: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "component": self.component,
            "plug_in": self.plug_in,
            "correction": self.correction,
            "corrected": self.corrected,
            "method": self.method,
            "backend": self.backend,
            "probes": self.probes_used,
            "seed": self.seed,
            "mc_stderr": self.mc_stderr,
        }


@dataclass(frozen=True)
class LeverageTable:
    """Per-observation leverage P_oo and component weight B_oo."""

    leverage: np.ndarray
    component_weight: np.ndarray
    component: str
    backend: str
    probes_used: int = 0


def quadratic_form(estimates_or_design, component: str) -> QuadraticForm:
    design = (
        estimates_or_design
        if isinstance(estimates_or_design, Design)
        else Design(estimates_or_design.panel)
    )
    return QuadraticForm(component=component, design=design)


def _stacked(design: Design, estimates: Estimates) -> np.ndarray:
    return design.stack_estimates(estimates.alpha, estimates.psi, estimates.beta)


def _check_estimates(panel: Panel, estimates: Estimates) -> None:
    if estimates.panel.n_obs != panel.n_obs or not np.array_equal(
        estimates.panel.log_wage, panel.log_wage
    ):
        raise DataError("estimates were not computed on this panel")


def exact_trace_quadratic(form: QuadraticForm, chunk: int = 512) -> float:
    """trace(A S^{-1}) through the deterministic Schur factorization.

    Only basis columns where A has support contribute, so the solve count is
    the number of parameters the component touches.
    """
    design = form.design
    left, right = form.blocks
    support = []
    if "alpha" in (left, right) or "alpha_plus_psi" in (left, right):
        support.append(np.arange(design.W))
    if "psi" in (left, right) or "alpha_plus_psi" in (left, right):
        support.append(np.arange(design.W, design.W + design.F - 1))
    cols = np.unique(np.concatenate(support))

    total = 0.0
    for lo in range(0, cols.size, chunk):
        idx = cols[lo : lo + chunk]
        basis = np.zeros((design.p, idx.size))
        basis[idx, np.arange(idx.size)] = 1.0
        a_cols = np.column_stack([form.apply(basis[:, i]) for i in range(idx.size)])
        solved = design.solve_exact(a_cols)
        total += float(solved[idx, np.arange(idx.size)].sum())
    return total


def hutchinson_trace_quadratic(
    form: QuadraticForm, probes: int, seed: int, cg_tol: float = DEFAULT_CG_TOL
) -> tuple[float, float]:
    """trace(A S^{-1}) by Rademacher probing: mean over probes of z'A S^{-1} z,
    each solve by conjugate gradient. Returns (estimate, MC standard error)."""
    design = form.design
    rng = np.random.default_rng(seed)
    vals = np.empty(probes)
    for r in range(probes):
        z = rng.integers(0, 2, design.p) * 2.0 - 1.0
        u, _ = design.solve_cg(z, rtol=cg_tol)
        vals[r] = float(z @ form.apply(u))
    stderr = float(vals.std(ddof=1) / np.sqrt(probes)) if probes > 1 else float("inf")
    return float(vals.mean()), stderr


def _exact_tables(design: Design, forms: list[QuadraticForm], chunk: int = 512):
    """One pass of chunked solves S^{-1} x_o giving exact leverages and the
    B_oo weights of every requested form."""
    n = design.n
    p = design.panel
    lev = np.empty(n)
    weights = {f.component: np.empty(n) for f in forms}
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n))
        sol = design.solve_for_observations(idx)

        w_rows = p.worker_idx[idx]
        f_rows = p.firm_idx[idx]
        r = np.arange(idx.size)
        pii = sol[w_rows, r].copy()
        keep = f_rows < design.F - 1
        pii[keep] += sol[design.W + f_rows[keep], r[keep]]
        if design.K:
            pii += np.einsum("ij,ji->i", p.covariates[idx], sol[design.W + design.F - 1 :, :])
        lev[idx] = pii

        for form in forms:
            left, right = form.blocks
            lv = design.obs_values(sol, left)
            lv = lv - lv.mean(axis=0)
            if right == left:
                rv = lv
            else:
                rv = design.obs_values(sol, right)
                rv = rv - rv.mean(axis=0)
            weights[form.component][idx] = np.einsum("oi,oi->i", lv, rv) / n
    return lev, weights


def _stochastic_leverages(design: Design, probes: int, rng, cg_tol: float) -> np.ndarray:
    """Unbiased leverage estimates: P_oo ~ mean_r (x_o' w_r)^2 with
    S w_r = D' z_r, z_r Rademacher over observations."""
    acc = np.zeros(design.n)
    for _ in range(probes):
        z = rng.integers(0, 2, design.n) * 2.0 - 1.0
        w, _ = design.solve_cg(design.apply_T(z), rtol=cg_tol)
        acc += design.apply(w) ** 2
    return acc / probes


def _stochastic_weights(
    design: Design, form: QuadraticForm, probes: int, rng, cg_tol: float
) -> np.ndarray:
    """Unbiased B_oo estimates via probes through the form's two obs maps.

    Per probe: (D S^{-1} Hl' z) o (D S^{-1} Hr' z) averages to n * B_oo since
    Rademacher coordinates are independent; divide by n at the end.
    """
    left, right = form.blocks
    acc = np.zeros(design.n)
    for _ in range(probes):
        z = rng.integers(0, 2, design.n) * 2.0 - 1.0
        ul, _ = design.solve_cg(form.scatter_T(z, "left"), rtol=cg_tol)
        a = design.apply(ul)
        if right == left:
            b = a
        else:
            ur, _ = design.solve_cg(form.scatter_T(z, "right"), rtol=cg_tol)
            b = design.apply(ur)
        acc += a * b
    return acc / (probes * design.n)


def compute_leverages(
    panel: Panel,
    conn: ConnectedSet | None = None,
    backend: str = "exact",
    probes: int = DEFAULT_PROBES,
    component: str = "var_psi",
    seed: int = 0,
    cg_tol: float = DEFAULT_CG_TOL,
) -> LeverageTable:
    """Per-observation leverages and component weights on a connected set.

    Exact backend: one (vectorized) solve per observation; the leverages sum
    to the design rank. Stochastic backend: unbiased Rademacher-probe
    estimates; the small-sample nonlinearity this induces downstream through
    1/(1 - P_oo) is documented and left uncorrected.
    """
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}")
    est_panel = panel if conn is None else restrict_panel(panel, conn.workers, conn.firms)
    design = Design(est_panel)
    form = QuadraticForm(component=component, design=design)
    if backend == "exact":
        lev, weights = _exact_tables(design, [form])
        return LeverageTable(
            leverage=lev,
            component_weight=weights[component],
            component=component,
            backend=backend,
        )
    rng = np.random.default_rng(seed)
    lev = _stochastic_leverages(design, probes, rng, cg_tol)
    bw = _stochastic_weights(design, form, probes, rng, cg_tol)
    return LeverageTable(
        leverage=lev,
        component_weight=bw,
        component=component,
        backend=backend,
        probes_used=probes,
    )


def correct_homoskedastic(
    panel: Panel,
    estimates: Estimates,
    form: QuadraticForm | str,
    backend: str = "exact",
    probes: int = DEFAULT_PROBES,
    seed: int = 0,
    cg_tol: float = DEFAULT_CG_TOL,
) -> CorrectionResult:
    """Trace-based correction under a common idiosyncratic variance."""
    _check_estimates(panel, estimates)
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}")
    if estimates.dof < 1:
        raise DataError("no residual degrees of freedom: cannot estimate sigma^2")
    if isinstance(form, str):
        form = quadratic_form(estimates, form)
    design = form.design
    phi = _stacked(design, estimates)
    plug_in = form.quad(phi)
    sigma2 = estimates.rss / estimates.dof

    if backend == "exact":
        trace = exact_trace_quadratic(form)
        stderr, used = 0.0, 0
    else:
        trace, tr_stderr = hutchinson_trace_quadratic(form, probes, seed, cg_tol)
        stderr, used = sigma2 * tr_stderr, probes
    correction = sigma2 * trace
    return CorrectionResult(
        component=form.component,
        plug_in=plug_in,
        correction=correction,
        corrected=plug_in - correction,
        method="homoskedastic_trace",
        backend=backend,
        probes_used=used,
        seed=seed if backend == "stochastic" else None,
        mc_stderr=stderr,
    )


def correct_leave_out(
    panel: Panel,
    estimates: Estimates,
    form: QuadraticForm | str,
    backend: str = "exact",
    probes: int = DEFAULT_PROBES,
    seed: int = 0,
    cg_tol: float = DEFAULT_CG_TOL,
) -> CorrectionResult:
    """Leave-one-out correction allowing unrestricted variance heterogeneity.

    The estimation set must be leave-one-out connected; any leverage at or
    above one is reported as a data error rather than clipped.
    """
    _check_estimates(panel, estimates)
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}")
    if isinstance(form, str):
        form = quadratic_form(estimates, form)
    design = form.design
    phi = _stacked(design, estimates)
    plug_in = form.quad(phi)
    y = design.panel.log_wage
    resid = estimates.residuals

    if backend == "exact":
        lev, weights = _exact_tables(design, [form])
        _require_below_one(lev)
        sigma2_obs = y * resid / (1.0 - lev)
        correction = float(weights[form.component] @ sigma2_obs)
        return CorrectionResult(
            component=form.component,
            plug_in=plug_in,
            correction=correction,
            corrected=plug_in - correction,
            method="leave_out",
            backend=backend,
        )

    rng = np.random.default_rng(seed)
    lev = _stochastic_leverages(design, probes, rng, cg_tol)
    _require_below_one(lev)
    sigma2_obs = y * resid / (1.0 - lev)
    left, right = form.blocks
    per_probe = np.empty(probes)
    for r in range(probes):
        z = rng.integers(0, 2, design.n) * 2.0 - 1.0
        ul, _ = design.solve_cg(form.scatter_T(z, "left"), rtol=cg_tol)
        a = design.apply(ul)
        if right == left:
            b = a
        else:
            ur, _ = design.solve_cg(form.scatter_T(z, "right"), rtol=cg_tol)
            b = design.apply(ur)
        per_probe[r] = float((a * b) @ sigma2_obs) / design.n
    correction = float(per_probe.mean())
    stderr = float(per_probe.std(ddof=1) / np.sqrt(probes)) if probes > 1 else float("inf")
    return CorrectionResult(
        component=form.component,
        plug_in=plug_in,
        correction=correction,
        corrected=plug_in - correction,
        method="leave_out",
        backend=backend,
        probes_used=probes,
        seed=seed,
        mc_stderr=stderr,
    )


def _require_below_one(lev: np.ndarray) -> None:
    worst = float(lev.max())
    if worst >= LEVERAGE_CAP:
        raise DataError(
            f"an observation has leverage {worst:.12f} >= 1: the estimation set "
            f"is not leave-one-out connected"
        )


def corrected_decomposition(
    panel: Panel,
    estimates: Estimates,
    method: str,
    backend: str = "exact",
    probes: int = DEFAULT_PROBES,
    seed: int = 0,
    cg_tol: float = DEFAULT_CG_TOL,
) -> Decomposition:
    """Decomposition with var_alpha, var_psi, and the covariance corrected by
    the chosen method; the residual is recomputed as total minus the corrected
    systematic components so additivity is preserved by construction."""
    if method not in ("homoskedastic_trace", "leave_out"):
        raise ConfigError(f"unknown correction method {method!r}")
    plug = decompose_variance(panel, estimates)
    design = Design(estimates.panel)
    results = {}

    if method == "leave_out" and backend == "exact":
        # share the expensive leverage pass across the three components
        forms = [QuadraticForm(c, design) for c in ("var_alpha", "var_psi", "cov_alpha_psi")]
        phi = _stacked(design, estimates)
        lev, weights = _exact_tables(design, forms)
        _require_below_one(lev)
        sigma2_obs = design.panel.log_wage * estimates.residuals / (1.0 - lev)
        for form in forms:
            plug_in = form.quad(phi)
            correction = float(weights[form.component] @ sigma2_obs)
            results[form.component] = CorrectionResult(
                component=form.component,
                plug_in=plug_in,
                correction=correction,
                corrected=plug_in - correction,
                method=method,
                backend=backend,
            )
    else:
        correct_fn = (
            correct_homoskedastic if method == "homoskedastic_trace" else correct_leave_out
        )
        for k, comp in enumerate(("var_alpha", "var_psi", "cov_alpha_psi")):
            form = QuadraticForm(comp, design)
            results[comp] = correct_fn(
                panel, estimates, form, backend=backend, probes=probes,
                seed=seed + k, cg_tol=cg_tol,
            )

    var_alpha = results["var_alpha"].corrected
    var_psi = results["var_psi"].corrected
    cov2 = 2.0 * results["cov_alpha_psi"].corrected
    var_resid = plug.total - var_alpha - var_psi - cov2
    components = {
        "var_alpha": var_alpha,
        "var_psi": var_psi,
        "cov2": cov2,
        "var_resid": var_resid,
    }
    for name in ("var_alpha", "var_psi"):
        if components[name] < 0:
            warnings.warn(
                f"corrected {name} is negative ({components[name]:.3e}); "
                f"reported as-is, not clamped",
                stacklevel=2,
            )
    flavor = "homoskedastic_corrected" if method == "homoskedastic_trace" else "leave_out_corrected"
    shares = {k: v / plug.total for k, v in components.items()} if plug.total else {}
    sd = np.sqrt(var_alpha * var_psi)
    corr = 0.5 * cov2 / sd if sd > 0 else float("nan")
    return Decomposition(
        total=plug.total,
        components=components,
        shares=shares,
        flavor=flavor,
        corr_alpha_psi=float(corr),
    )


def correction_pairs(results) -> list[dict]:
    """Paired plug-in / corrected rows for reporting."""
    rows = []
    for res in results:
        rows.append(
            {
                "component": res.component,
                "plug_in": res.plug_in,
                "corrected": res.corrected,
                "method": res.method,
            }
        )
    return rows

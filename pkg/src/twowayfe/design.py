"""Sparse design and normal-equation solvers for the worker-firm regression.

The regression of log wages on worker indicators, firm indicators, and
covariates has one exact collinearity on a connected set (worker and firm
levels trade off one constant), so the design used here drops the last
internal firm's indicator: that firm's effect is pinned to zero and results
are re-normalized afterwards. The identified parameter vector is

    phi = (alpha_0..alpha_{W-1}, psi_0..psi_{F-2}, beta_0..beta_{K-1})

of length p = W + F - 1 + K. All solvers work on the normal equations
S phi = D' y with S = D'D, exploiting that the worker block of S is diagonal:
eliminating it leaves a dense Schur complement of dimension F - 1 + K, which
is factorized once for exact solves or applied matrix-free inside CG.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DataError, NumericalError
from .panel import Panel


class Design:
    """Design matrix machinery for one estimation panel.

    Parameters
    ----------
    panel : Panel restricted to a single connected set. The last internal firm
        index is the dropped reference.
    """

    def __init__(self, panel: Panel):
        self.panel = panel
        n = panel.n_obs
        self.n = n
        self.W = panel.n_workers
        self.F = panel.n_firms
        self.K = panel.covariate_count
        self.p = self.W + self.F - 1 + self.K
        self.ref_firm = self.F - 1

        w, f = panel.worker_idx, panel.firm_idx
        ones = np.ones(n)
        self.worker_mat = sp.csr_matrix((ones, (np.arange(n), w)), shape=(n, self.W))
        firm_full = sp.csr_matrix((ones, (np.arange(n), f)), shape=(n, self.F))
        self.firm_red = firm_full[:, : self.F - 1].tocsr()
        if self.K:
            self.g_mat = sp.hstack([self.firm_red, sp.csr_matrix(panel.covariates)]).tocsr()
        else:
            self.g_mat = self.firm_red
        self.d_worker = np.bincount(w, minlength=self.W).astype(np.float64)
        self.g_firm = np.bincount(f, minlength=self.F).astype(np.float64)
        self.contact = (self.worker_mat.T @ self.g_mat).tocsr()  # W x (F-1+K)

        self._schur = None
        self._schur_factor = None
        self._schur_diag = None

    # -- block slices ----------------------------------------------------
    @property
    def alpha_slice(self):
        return slice(0, self.W)

    @property
    def psi_slice(self):
        return slice(self.W, self.W + self.F - 1)

    @property
    def beta_slice(self):
        return slice(self.W + self.F - 1, self.p)

    def rank(self) -> int:
        return self.p

    # -- design application ------------------------------------------------
    def apply(self, phi: np.ndarray) -> np.ndarray:
        """D @ phi: fitted value per observation (supports (p,) or (p, m))."""
        a = phi[self.alpha_slice]
        g = phi[self.W :]
        return a[self.panel.worker_idx] + self.g_mat @ g

    def apply_T(self, v: np.ndarray) -> np.ndarray:
        """D' @ v for an observation-space vector (supports (n,) or (n, m))."""
        if v.ndim == 1:
            out = np.empty(self.p)
            out[self.alpha_slice] = np.bincount(
                self.panel.worker_idx, weights=v, minlength=self.W
            )
        else:
            out = np.empty((self.p, v.shape[1]))
            for k in range(v.shape[1]):
                out[self.alpha_slice, k] = np.bincount(
                    self.panel.worker_idx, weights=v[:, k], minlength=self.W
                )
        out[self.W :] = self.g_mat.T @ v
        return out

    def obs_values(self, phi: np.ndarray, block: str) -> np.ndarray:
        """Per-observation value of one additive block of D @ phi.

        block: "alpha" -> alpha_{w(o)}, "psi" -> psi_{j(o)} (reference firm 0),
        "alpha_plus_psi" -> their sum. Supports stacked (p,) or (p, m) input.
        """
        w, f = self.panel.worker_idx, self.panel.firm_idx
        if block == "alpha":
            return phi[self.alpha_slice][w]
        psi = phi[self.psi_slice]
        pad = np.zeros((1,) + psi.shape[1:])
        psi_full = np.concatenate([psi, pad], axis=0)
        if block == "psi":
            return psi_full[f]
        if block == "alpha_plus_psi":
            return phi[self.alpha_slice][w] + psi_full[f]
        raise ValueError(f"unknown block {block!r}")

    def scatter_obs(self, v: np.ndarray, block: str) -> np.ndarray:
        """Adjoint of obs_values: map observation-space v into the stacked
        parameter space through one block's incidence."""
        if v.ndim == 1:
            out = np.zeros(self.p)
        else:
            out = np.zeros((self.p, v.shape[1]))
        w, f = self.panel.worker_idx, self.panel.firm_idx
        if block in ("alpha", "alpha_plus_psi"):
            if v.ndim == 1:
                out[self.alpha_slice] = np.bincount(w, weights=v, minlength=self.W)
            else:
                for k in range(v.shape[1]):
                    out[self.alpha_slice, k] = np.bincount(w, weights=v[:, k], minlength=self.W)
        if block in ("psi", "alpha_plus_psi"):
            out[self.psi_slice] = self.firm_red.T @ v
        return out

    # -- normal equations --------------------------------------------------
    def _ensure_schur(self):
        if self._schur_factor is None:
            gtg = (self.g_mat.T @ self.g_mat).toarray()
            bt_dinv_b = (
                self.contact.T @ sp.diags(1.0 / self.d_worker) @ self.contact
            ).toarray()
            self._schur = gtg - bt_dinv_b
            self._schur_factor = scipy.linalg.cho_factor(self._schur, lower=True)

    def schur_diag(self) -> np.ndarray:
        if self._schur_diag is None:
            gtg_diag = np.asarray(self.g_mat.multiply(self.g_mat).sum(axis=0)).ravel()
            b2 = self.contact.multiply(self.contact)
            corr = np.asarray(
                (sp.diags(1.0 / self.d_worker) @ b2).sum(axis=0)
            ).ravel()
            self._schur_diag = gtg_diag - corr
        return self._schur_diag

    def _reduce_rhs(self, b: np.ndarray):
        b_a = b[self.alpha_slice]
        b_g = b[self.W :]
        if b.ndim == 1:
            t = b_g - self.contact.T @ (b_a / self.d_worker)
        else:
            t = b_g - self.contact.T @ (b_a / self.d_worker[:, None])
        return b_a, t

    def _back_substitute(self, b_a: np.ndarray, y_g: np.ndarray) -> np.ndarray:
        if b_a.ndim == 1:
            y_a = (b_a - self.contact @ y_g) / self.d_worker
            return np.concatenate([y_a, y_g])
        y_a = (b_a - self.contact @ y_g) / self.d_worker[:, None]
        return np.vstack([y_a, y_g])

    def solve_exact(self, b: np.ndarray) -> np.ndarray:
        """S^{-1} b through the dense Schur-complement Cholesky factor.

        Accepts a stacked vector (p,) or matrix (p, m) of right-hand sides.
        """
        b_a, t = self._reduce_rhs(b)
        if self.p == self.W:  # single firm, no covariates: S is diagonal
            return self._back_substitute(b_a, t)
        self._ensure_schur()
        y_g = scipy.linalg.cho_solve(self._schur_factor, t)
        return self._back_substitute(b_a, y_g)

    def solve_for_observations(self, obs_idx: np.ndarray) -> np.ndarray:
        """S^{-1} x_o for a batch of observations o, stacked as columns.

        Each column of D' is one worker indicator, one firm indicator, and the
        covariate row, so the Schur reduction never touches a dense
        worker-block right-hand side.
        """
        p_ = self.panel
        c = obs_idx.size
        w_rows = p_.worker_idx[obs_idx]
        f_rows = p_.firm_idx[obs_idx]
        m = self.F - 1 + self.K
        cols = np.arange(c)

        dinv_rows = 1.0 / self.d_worker[w_rows]
        if m:
            t = -(sp.diags(dinv_rows) @ self.contact[w_rows]).toarray().T
            keep = f_rows < self.F - 1
            t[f_rows[keep], cols[keep]] += 1.0
            if self.K:
                t[self.F - 1 :, :] += p_.covariates[obs_idx].T
            self._ensure_schur()
            y_g = scipy.linalg.cho_solve(self._schur_factor, t)
            y_a = -(self.contact @ y_g) / self.d_worker[:, None]
        else:
            y_g = np.zeros((0, c))
            y_a = np.zeros((self.W, c))
        y_a[w_rows, cols] += dinv_rows
        return np.vstack([y_a, y_g])

    def solve_cg(self, b: np.ndarray, rtol=1e-12, maxiter=10000):
        """S^{-1} b with conjugate gradient on the Schur complement.

        Matrix-free: the dense Schur matrix is never formed, so this scales to
        very large firm counts. Returns (solution, iterations). Raises
        NumericalError if CG does not reach `rtol` within `maxiter`.
        """
        m = self.F - 1 + self.K
        b_a0, t0 = self._reduce_rhs(b)
        if m == 0:  # single firm, no covariates: nothing to iterate on
            return self._back_substitute(b_a0, t0), 0
        contact = self.contact
        dinv = 1.0 / self.d_worker
        g_mat = self.g_mat

        def matvec(v):
            return g_mat.T @ (g_mat @ v) - contact.T @ (dinv * (contact @ v))

        op = LinearOperator((m, m), matvec=matvec)
        diag = self.schur_diag()
        precond = LinearOperator((m, m), matvec=lambda v: v / diag)

        b_a, t = b_a0, t0
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        y_g, info = cg(op, t, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond, callback=count)
        if info != 0:
            resid = np.linalg.norm(matvec(y_g) - t) / max(np.linalg.norm(t), 1e-300)
            raise NumericalError(
                f"conjugate gradient did not converge in {maxiter} iterations "
                f"(relative residual {resid:.3e})"
            )
        return self._back_substitute(b_a, y_g), iters

    def stack_estimates(self, alpha: np.ndarray, psi: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Re-express mean-zero-normalized estimates in the reference-firm basis."""
        shift = psi[self.ref_firm]
        phi = np.empty(self.p)
        phi[self.alpha_slice] = alpha + shift
        phi[self.psi_slice] = psi[: self.F - 1] - shift
        phi[self.beta_slice] = beta
        return phi


def check_covariate_collinearity(panel: Panel, tol=1e-10) -> None:
    """Reject covariates with no variation inside any (worker, firm) cell.

    A column that is constant within every cell lies (at best) in the span of
    the worker and firm indicators and cannot be separated from them; failing
    here beats a silently ill-conditioned solve. Raises
    CollinearCovariateError naming the first offending column.
    """
    from .errors import CollinearCovariateError

    if panel.covariate_count == 0:
        return
    cell = panel.worker_idx * panel.n_firms + panel.firm_idx
    order = np.argsort(cell, kind="stable")
    sorted_cell = cell[order]
    boundaries = np.flatnonzero(np.diff(sorted_cell)) + 1
    starts = np.concatenate([[0], boundaries])
    counts = np.diff(np.concatenate([starts, [len(cell)]]))
    for k in range(panel.covariate_count):
        col = panel.covariates[order, k]
        cell_sums = np.add.reduceat(col, starts)
        cell_means = cell_sums / counts
        resid = col - np.repeat(cell_means, counts)
        scale = max(1.0, float(np.abs(col).max(initial=0.0)))
        if np.abs(resid).max(initial=0.0) <= tol * scale:
            raise CollinearCovariateError(k, panel.covariate_names[k])


def check_connected(panel: Panel) -> None:
    """Raise DataError unless the panel's firms form one connected set."""
    from .network import UnionFind

    pairs = np.unique(np.stack([panel.worker_idx, panel.firm_idx], axis=1), axis=0)
    uf = UnionFind(panel.n_firms)
    counts = np.bincount(pairs[:, 0], minlength=panel.n_workers)
    start = 0
    for c in counts:
        for k in range(start, start + c - 1):
            uf.union(int(pairs[k, 1]), int(pairs[k + 1, 1]))
        start += c
    roots = {uf.find(j) for j in range(panel.n_firms)}
    if len(roots) > 1:
        raise DataError(
            "estimation panel is not connected: extract a connected set first "
            f"({len(roots)} components found)"
        )

"""Nonparametric MLE of the residual prior on a fixed 2-D grid.

The prior is a discrete probability measure over a product grid of atoms.
Weights are fit by multiplicative EM updates against heteroscedastic
bivariate Gaussian likelihoods. EM on a fixed grid is provably monotone
in log-likelihood and keeps weights on the simplex at every step.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg2 import eigh2

DEFAULT_GRID_POINTS = 40
DEFAULT_PADDING = 0.05
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 20000
DEFAULT_RESTARTS = 5

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class NpmleConfig:
    m: int = DEFAULT_GRID_POINTS
    padding: float = DEFAULT_PADDING
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    restarts: int = DEFAULT_RESTARTS


@dataclass
class GridSpec:
    bounds: np.ndarray  # (2, 2): [lo, hi] per dimension
    points_per_dim: int
    atoms: np.ndarray  # (m*m, 2), row-major product grid


@dataclass
class DiscretePrior:
    atoms: np.ndarray  # (K, 2)
    weights: np.ndarray  # (K,)

    def validate(self):
        if np.any(self.weights < -1e-15):
            raise ValueError("negative prior weight")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()}, not 1")

    def to_dict(self):
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["atoms"], float), np.asarray(d["weights"], float))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


@dataclass
class FitDiagnostics:
    log_likelihood: float
    iterations: int
    converged: bool
    loglik_trace: list = field(default_factory=list)
    kappa_j: float = None
    kappa_gap: float = None

    def to_dict(self):
        return {
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "loglik_trace": self.loglik_trace,
            "kappa_j": self.kappa_j,
            "kappa_gap": self.kappa_gap,
        }


def kappa_tolerance(n):
    """Allowed log-likelihood gap for an approximate NPMLE at sample size n."""
    return (3.0 / n) * math.log(n / (2.0 * math.pi * math.e) ** (1.0 / 3.0))


def build_grid(samples, m=DEFAULT_GRID_POINTS, padding=DEFAULT_PADDING):
    """Evenly spaced m x m product grid covering the residual samples.

    Bounds are the per-dimension sample range expanded by padding*range;
    a degenerate dimension (all values equal) is expanded by 1 absolute.
    """
    if m < 2:
        raise ValueError("grid needs at least 2 points per dimension")
    z = np.array([s.z_hat for s in samples])
    if z.size == 0:
        raise ValueError("no samples")
    bounds = np.zeros((2, 2))
    axes = []
    for d in range(2):
        lo, hi = z[:, d].min(), z[:, d].max()
        rng = hi - lo
        if rng == 0.0:
            lo, hi = lo - 1.0, hi + 1.0
        else:
            lo, hi = lo - padding * rng, hi + padding * rng
        bounds[d] = (lo, hi)
        axes.append(np.linspace(lo, hi, m))
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    atoms = np.column_stack([xx.ravel(), yy.ravel()])
    return GridSpec(bounds, m, atoms)


def _gaussian_log_kernel(z, psi, atoms):
    """log N(z; atom, psi) for every atom; vectorized over atoms."""
    vals, _ = eigh2(psi)
    if vals[0] < 1e-8:
        raise ValueError(f"psi eigenvalue {vals[0]} below 1e-8; repair upstream")
    det = vals[0] * vals[1]
    inv = np.linalg.inv(psi)
    q = z - atoms  # (K, 2)
    quad = np.einsum("ki,ij,kj->k", q, inv, q)
    return -0.5 * quad - LOG_2PI - 0.5 * math.log(det)


def likelihood_matrix(samples, grid):
    """J x K matrix of normalized Gaussian densities of z_hat at each atom."""
    L = np.zeros((len(samples), grid.atoms.shape[0]))
    for j, s in enumerate(samples):
        try:
            L[j] = np.exp(_gaussian_log_kernel(s.z_hat, s.psi_hat, grid.atoms))
        except ValueError as exc:
            raise ValueError(f"policy {s.policy_id}: {exc}") from exc
        if L[j].max() <= 0.0:
            raise ValueError(
                f"policy {s.policy_id}: all kernel values underflow; "
                "grid does not cover the sample"
            )
    return L


def log_likelihood(L, weights):
    """Average log mixture density (1/J) sum_j log(sum_k L[j,k] w_k).

    Rows are max-rescaled so the sum never fully underflows.
    """
    row_max = L.max(axis=1)
    mix = (L / row_max[:, None]) @ weights
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(mix) + np.log(row_max)))


def _em(L_scaled, log_row_max, w, tol, max_iter):
    """Multiplicative EM on rescaled likelihoods; returns (w, trace, iters, converged)."""
    J = L_scaled.shape[0]
    ll = float(np.mean(np.log(L_scaled @ w) + log_row_max))
    trace = [ll]
    converged = False
    it = 0
    last_gain = np.inf
    for it in range(1, max_iter + 1):
        mix = L_scaled @ w
        w = w * (L_scaled.T @ (1.0 / mix)) / J
        # guard simplex drift from roundoff
        w = np.maximum(w, 0.0)
        w /= w.sum()
        new_ll = float(np.mean(np.log(L_scaled @ w) + log_row_max))
        if new_ll < ll - 1e-12:
            raise AssertionError(
                f"EM log-likelihood decreased: {ll} -> {new_ll} at iter {it}"
            )
        last_gain = abs(new_ll - ll) / max(1.0, abs(new_ll))
        ll = new_ll
        trace.append(ll)
        if last_gain < tol:
            converged = True
            break
    return w, trace, it, converged, last_gain


def fit_npmle(L, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, kappa_check=False,
              restarts=DEFAULT_RESTARTS, seed=0, atoms=None):
    """Fit simplex weights maximizing the mixture log-likelihood.

    Starts from uniform weights. When kappa_check is set, refits from
    `restarts` random Dirichlet(1) initializations and reports the gap to
    the best restart, which should stay within the kappa tolerance.
    Returns (DiscretePrior, FitDiagnostics); prior atoms are taken from
    `atoms` when given, else indexed placeholders are not stored.
    """
    J, K = L.shape
    if J < 1:
        raise ValueError("empty likelihood matrix")
    row_max = L.max(axis=1)
    if np.any(row_max <= 0.0):
        raise ValueError("likelihood matrix has an all-zero row")
    L_scaled = L / row_max[:, None]
    log_row_max = np.log(row_max)

    w0 = np.full(K, 1.0 / K)
    w, trace, iters, converged, last_gain = _em(L_scaled, log_row_max, w0, tol, max_iter)
    ll = trace[-1]

    kappa_j = kappa_gap = None
    if kappa_check:
        kappa_j = kappa_tolerance(J)
        rng = np.random.default_rng(seed)
        best = ll
        for _ in range(restarts):
            wr = rng.dirichlet(np.ones(K))
            wr, tr, _, _, _ = _em(L_scaled, log_row_max, wr, tol, max_iter)
            best = max(best, tr[-1])
        kappa_gap = best - ll

    # decimate the trace so diagnostics stay small
    step = max(1, len(trace) // 200)
    diag = FitDiagnostics(
        log_likelihood=ll,
        iterations=iters,
        converged=converged or last_gain <= 100 * tol,
        loglik_trace=trace[::step] + ([trace[-1]] if (len(trace) - 1) % step else []),
        kappa_j=kappa_j,
        kappa_gap=kappa_gap,
    )
    prior_atoms = atoms if atoms is not None else np.zeros((K, 2))
    prior = DiscretePrior(np.asarray(prior_atoms, float), w)
    prior.validate()
    return prior, diag


def fit_prior(samples, config=None, kappa_check=False, seed=0):
    """Grid + likelihood + EM in one call; returns (prior, grid, diagnostics)."""
    config = config or NpmleConfig()
    grid = build_grid(samples, config.m, config.padding)
    L = likelihood_matrix(samples, grid)
    prior, diag = fit_npmle(
        L,
        tol=config.tol,
        max_iter=config.max_iter,
        kappa_check=kappa_check,
        restarts=config.restarts,
        seed=seed,
        atoms=grid.atoms,
    )
    return prior, grid, diag

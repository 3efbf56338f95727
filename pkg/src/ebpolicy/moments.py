"""Per-type location/scale estimation and residual standardization.

For each policy type t we estimate the location alpha_t as the sample
mean of the normalized estimates and the scale Omega_t as the sample
covariance minus the average sampling covariance. The difference can be
indefinite in finite samples, so eigenvalues below a floor are clamped
before taking the symmetric square root used to standardize residuals.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg2 import eigh2, from_eigh2, inv_sqrtm_psd2, sqrtm_psd2

DEFAULT_EIGEN_FLOOR = 0.01


@dataclass
class MomentsConfig:
    eigen_floor: float = DEFAULT_EIGEN_FLOOR
    # "j" divides the covariance by the group count (sample analog of the
    # population moment); "j-1" gives the unbiased variant.
    variance_denominator: str = "j"


@dataclass
class LocationScale:
    alpha: np.ndarray  # (T, 2)
    omega_raw: np.ndarray  # (T, 2, 2) before repair
    omega: np.ndarray  # (T, 2, 2) repaired PSD
    omega_sqrt: np.ndarray  # (T, 2, 2)
    omega_inv_sqrt: np.ndarray  # (T, 2, 2)
    eigenvalues_before_repair: np.ndarray = field(default=None)  # (T, 2)

    @property
    def n_types(self):
        return self.alpha.shape[0]

    def audit_dict(self):
        return {
            "types": [
                {
                    "alpha": self.alpha[t].tolist(),
                    "omega_raw": self.omega_raw[t].tolist(),
                    "omega_repaired": self.omega[t].tolist(),
                    "eigenvalues_before_repair": self.eigenvalues_before_repair[
                        t
                    ].tolist(),
                }
                for t in range(self.n_types)
            ]
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.audit_dict(), fh, indent=2)


@dataclass
class StandardizedSample:
    policy_id: str
    type_index: int
    z_hat: np.ndarray  # 2-vector
    psi_hat: np.ndarray  # 2x2 PSD


def _group_indices(records, n_types):
    groups = [[] for _ in range(n_types)]
    for i, r in enumerate(records):
        groups[r.type_index].append(i)
    return groups


def estimate_location(records, n_types):
    """Per-type mean of the normalized estimates, shape (T, 2)."""
    groups = _group_indices(records, n_types)
    alpha = np.zeros((n_types, 2))
    for t, idx in enumerate(groups):
        if not idx:
            raise ValueError(f"type {t} has no records")
        alpha[t] = np.mean([records[i].y for i in idx], axis=0)
    return alpha


def estimate_scale(records, alpha, denominator="j"):
    """Sample covariance of y minus the mean sampling covariance, per type.

    The result is symmetric by construction but may be indefinite; callers
    repair it with psd_repair before use.
    """
    n_types = alpha.shape[0]
    groups = _group_indices(records, n_types)
    omega = np.zeros((n_types, 2, 2))
    for t, idx in enumerate(groups):
        if len(idx) < 2:
            raise ValueError(
                f"type {t} has {len(idx)} record(s); estimate_scale needs >= 2"
            )
        ys = np.array([records[i].y for i in idx])
        resid = ys - alpha[t]
        denom = len(idx) - 1 if denominator == "j-1" else len(idx)
        cov = resid.T @ resid / denom
        mean_sigma = np.mean([records[i].sigma for i in idx], axis=0)
        omega[t] = 0.5 * (cov + cov.T) - mean_sigma
    return omega


def psd_repair(m, eigen_floor=DEFAULT_EIGEN_FLOOR):
    """Clamp eigenvalues below the floor, preserving eigenvectors.

    Idempotent; returns (repaired, eigenvalues_before_repair).
    """
    vals, vecs = eigh2(m)
    repaired = from_eigh2(np.maximum(vals, eigen_floor), vecs)
    return 0.5 * (repaired + repaired.T), vals


def build_location_scale(records, n_types, config=None):
    """Estimate, repair, and precompute square roots for all types."""
    config = config or MomentsConfig()
    alpha = estimate_location(records, n_types)
    omega_raw = estimate_scale(records, alpha, config.variance_denominator)
    omega = np.zeros_like(omega_raw)
    sqrt = np.zeros_like(omega_raw)
    inv_sqrt = np.zeros_like(omega_raw)
    pre_vals = np.zeros((n_types, 2))
    for t in range(n_types):
        omega[t], pre_vals[t] = psd_repair(omega_raw[t], config.eigen_floor)
        sqrt[t] = sqrtm_psd2(omega[t])
        inv_sqrt[t] = inv_sqrtm_psd2(omega[t])
    return LocationScale(alpha, omega_raw, omega, sqrt, inv_sqrt, pre_vals)


def standardize(records, ls):
    """Residualize records: z = Omega^{-1/2}(y - alpha), psi = Omega^{-1/2} Sigma Omega^{-1/2}."""
    out = []
    for r in records:
        t = r.type_index
        inv = ls.omega_inv_sqrt[t]
        z = inv @ (r.y - ls.alpha[t])
        psi = inv @ r.sigma @ inv
        out.append(StandardizedSample(r.policy_id, t, z, 0.5 * (psi + psi.T)))
    return out


def destandardize(z, type_index, ls):
    """Map a residual-space point back to estimate space."""
    return ls.alpha[type_index] + ls.omega_sqrt[type_index] @ z

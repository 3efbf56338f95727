"""Load policy datasets and convert them to normalized estimate records.

Input rows carry benefit (WTP) and net cost point estimates with reported
95% confidence intervals plus the upfront program cost. We turn interval
widths into sampling variances, divide everything by program cost, and
assign integer type indices in first-appearance order.
"""

import csv
from dataclasses import dataclass

import numpy as np

# 97.5% standard normal quantile, hard-coded for bit stability.
Z_975 = 1.959963984540054

REQUIRED_COLUMNS = [
    "policy_id",
    "type",
    "wtp",
    "wtp_lb",
    "wtp_ub",
    "cost",
    "cost_lb",
    "cost_ub",
    "program_cost",
]
OPTIONAL_COLUMNS = ["sigma_cov"]


class ParseError(ValueError):
    """Malformed dataset: missing column, bad cell, or invalid row."""


@dataclass(frozen=True)
class RawPolicyRow:
    policy_id: str
    type_label: str
    wtp: float
    wtp_lb: float
    wtp_ub: float
    cost: float
    cost_lb: float
    cost_ub: float
    program_cost: float
    sigma_cov: float | None = None


@dataclass
class PolicyRecord:
    """Program-cost-normalized estimates with 2x2 sampling covariance."""

    policy_id: str
    type_index: int
    y: np.ndarray  # (wtp_hat, g_hat)
    sigma: np.ndarray  # 2x2 symmetric PSD

    def validate(self):
        if self.y.shape != (2,) or not np.all(np.isfinite(self.y)):
            raise ValueError(f"{self.policy_id}: y must be a finite 2-vector")
        s = self.sigma
        if s.shape != (2, 2) or abs(s[0, 1] - s[1, 0]) > 1e-12:
            raise ValueError(f"{self.policy_id}: sigma must be symmetric 2x2")
        tr, det = s[0, 0] + s[1, 1], s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
        if tr < -1e-12 or det < -1e-12 * max(1.0, tr * tr):
            raise ValueError(f"{self.policy_id}: sigma is not PSD")


def ci_to_variance(lb, ub):
    """Sampling variance implied by a reported 95% confidence interval.

    Only the width matters; reported intervals need not be centered at
    the point estimate.
    """
    if ub < lb:
        raise ValueError(f"invalid interval: ub={ub} < lb={lb}")
    return ((ub - lb) / (2.0 * Z_975)) ** 2


def normalize_row(row, type_map):
    """Convert a raw row to a PolicyRecord normalized by program cost.

    Estimates are divided by program cost and variances by its square.
    The WTP/cost covariance is zero unless the row carries sigma_cov.
    """
    if row.program_cost <= 0:
        raise ValueError(f"{row.policy_id}: program_cost must be positive")
    if row.type_label not in type_map:
        raise ValueError(f"{row.policy_id}: unknown type label {row.type_label!r}")
    pc = row.program_cost
    y = np.array([row.wtp, row.cost]) / pc
    var_w = ci_to_variance(row.wtp_lb, row.wtp_ub) / pc**2
    var_g = ci_to_variance(row.cost_lb, row.cost_ub) / pc**2
    cov = 0.0 if row.sigma_cov is None else row.sigma_cov / pc**2
    sigma = np.array([[var_w, cov], [cov, var_g]])
    rec = PolicyRecord(row.policy_id, type_map[row.type_label], y, sigma)
    rec.validate()
    return rec


def _parse_float(value, row_num, column):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ParseError(
            f"row {row_num}: non-numeric value {value!r} in column {column!r}"
        ) from None


def read_rows(path):
    """Parse the dataset CSV into RawPolicyRow objects, preserving order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise ParseError(f"missing column {col!r}")
        has_cov = "sigma_cov" in header
        rows = []
        seen = set()
        for i, raw in enumerate(reader, start=2):
            pid = raw.get("policy_id") or ""
            if not pid:
                raise ParseError(f"row {i}: empty policy_id")
            if pid in seen:
                raise ParseError(f"row {i}: duplicate policy_id {pid!r}")
            seen.add(pid)
            vals = {
                c: _parse_float(raw.get(c), i, c)
                for c in REQUIRED_COLUMNS
                if c not in ("policy_id", "type")
            }
            cov = None
            if has_cov and raw.get("sigma_cov") not in (None, ""):
                cov = _parse_float(raw["sigma_cov"], i, "sigma_cov")
            row = RawPolicyRow(
                policy_id=pid,
                type_label=raw["type"],
                wtp=vals["wtp"],
                wtp_lb=vals["wtp_lb"],
                wtp_ub=vals["wtp_ub"],
                cost=vals["cost"],
                cost_lb=vals["cost_lb"],
                cost_ub=vals["cost_ub"],
                program_cost=vals["program_cost"],
                sigma_cov=cov,
            )
            if row.wtp_ub < row.wtp_lb or row.cost_ub < row.cost_lb:
                raise ParseError(f"row {i}: confidence interval has ub < lb")
            if row.program_cost <= 0:
                raise ParseError(f"row {i}: program_cost must be positive")
            rows.append(row)
    return rows


def write_rows(rows, path):
    """Write RawPolicyRow objects back out in the input CSV schema."""
    has_cov = any(r.sigma_cov is not None for r in rows)
    header = REQUIRED_COLUMNS + (["sigma_cov"] if has_cov else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            rec = [
                r.policy_id,
                r.type_label,
                repr(r.wtp),
                repr(r.wtp_lb),
                repr(r.wtp_ub),
                repr(r.cost),
                repr(r.cost_lb),
                repr(r.cost_ub),
                repr(r.program_cost),
            ]
            if has_cov:
                rec.append("" if r.sigma_cov is None else repr(r.sigma_cov))
            writer.writerow(rec)


def type_table(rows):
    """Map type labels to indices in first-appearance order."""
    labels = []
    for r in rows:
        if r.type_label not in labels:
            labels.append(r.type_label)
    return {label: i for i, label in enumerate(labels)}


def load_dataset(path):
    """Load a dataset CSV.

    Returns (records, type_labels) where type_labels[i] is the label of
    type index i.
    """
    rows = read_rows(path)
    tmap = type_table(rows)
    try:
        records = [normalize_row(r, tmap) for r in rows]
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    labels = sorted(tmap, key=tmap.get)
    return records, labels

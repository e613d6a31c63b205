"""Post-fit subgroup characterization and plot-data emission.

Covariate contrasts between the recommended subgroups are screened with
Hommel-adjusted p-values (Welch t-tests for continuous covariates,
chi-squared for binary ones).  The adjusted p-values are a filter, not an
inference: they are kept on the row objects but left out of display tables.
Plot data is emitted as long-format tables for external rendering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .fitting import FittedSubgroupModel
from .validation import ValidationReport


def hommel_adjust(pvalues) -> np.ndarray:
    """Hommel step-up adjusted p-values (equivalent to closed testing with
    Simes local tests)."""
    p = np.asarray(pvalues, dtype=float)
    n = len(p)
    if np.any((p < 0) | (p > 1) | ~np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    if n <= 1:
        return p.copy()
    o = np.argsort(p, kind="stable")
    ps = p[o]
    i = np.arange(1, n + 1)
    pa = np.full(n, np.min(n * ps / i))
    q = pa.copy()
    for m in range(n - 1, 1, -1):
        i1 = np.arange(n - m + 1)          # 1..(n-m+1) in 1-based terms
        i2 = np.arange(n - m + 1, n)       # (n-m+2)..n
        q1 = np.min(m * ps[i2] / np.arange(2, m + 1))
        q[i1] = np.minimum(m * ps[i1], q1)
        q[i2] = q[n - m]
        pa = np.maximum(pa, q)
    adjusted = np.maximum(pa, ps)
    out = np.empty(n)
    out[o] = adjusted
    return out


@dataclass
class SubgroupSummaryRow:
    """Covariate contrast between the reference-recommended subgroup and the rest.

    difference = mean(reference-recommended) - mean(other-recommended).
    adjusted_p is retained for filtering only and is not part of display
    output.  zero_variance flags covariates constant in both subgroups
    (p set to 1).
    """

    name: str
    mean_ref_rec: float
    mean_other_rec: float
    difference: float
    se_ref_rec: float
    se_other_rec: float
    adjusted_p: float
    raw_p: float
    test: str
    zero_variance: bool = False


def _welch_p(a: np.ndarray, b: np.ndarray):
    if a.std(ddof=1) == 0.0 and b.std(ddof=1) == 0.0:
        return 1.0, True
    res = sps.ttest_ind(a, b, equal_var=False)
    p = float(res.pvalue)
    if not np.isfinite(p):
        return 1.0, True
    return p, False


def _chi2_p(a: np.ndarray, b: np.ndarray):
    values = np.unique(np.concatenate([a, b]))
    if len(values) < 2:
        return 1.0, True
    table = np.array([[np.sum(a == v) for v in values],
                      [np.sum(b == v) for v in values]], dtype=float)
    if np.any(table.sum(axis=0) == 0) or np.any(table.sum(axis=1) == 0):
        return 1.0, True
    res = sps.chi2_contingency(table, correction=False)
    p = float(res.pvalue)
    if not np.isfinite(p):
        return 1.0, True
    return p, False


def summarize_subgroups(x, recommendations, reference, names=None,
                        p_threshold: float | None = None):
    """Per-covariate contrasts between recommended subgroups.

    Splits subjects into the reference-recommended subgroup and everyone
    else, tests each covariate (Welch t-test, or chi-squared when it takes
    at most two distinct values), applies the Hommel adjustment across
    covariates, and optionally filters rows at `p_threshold`.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    rec = np.asarray(recommendations, dtype=object)
    in_ref = np.asarray([r == reference for r in rec.tolist()], dtype=bool)
    if in_ref.sum() < 2 or (~in_ref).sum() < 2:
        raise ValueError("each recommended subgroup needs at least 2 subjects")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]

    raw = np.empty(p)
    rows = []
    for j in range(p):
        a = x[in_ref, j]
        b = x[~in_ref, j]
        binary = len(np.unique(x[:, j][np.isfinite(x[:, j])])) <= 2
        if binary:
            pval, flat = _chi2_p(a, b)
            test = "chi2"
        else:
            pval, flat = _welch_p(a, b)
            test = "welch_t"
        raw[j] = pval
        rows.append(SubgroupSummaryRow(
            name=names[j],
            mean_ref_rec=float(a.mean()),
            mean_other_rec=float(b.mean()),
            difference=float(a.mean() - b.mean()),
            se_ref_rec=float(a.std(ddof=1) / np.sqrt(len(a))),
            se_other_rec=float(b.std(ddof=1) / np.sqrt(len(b))),
            adjusted_p=np.nan,
            raw_p=pval,
            test=test,
            zero_variance=flat,
        ))
    adj = hommel_adjust(raw)
    for j, row in enumerate(rows):
        row.adjusted_p = float(adj[j])
    if p_threshold is not None:
        rows = [r for r in rows if r.adjusted_p <= p_threshold]
    return rows


@dataclass
class PlotData:
    """Long-format plot table: a kind tag, column names, and value rows."""

    kind: str
    columns: list
    rows: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# kind: {self.kind}\n")
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for r in self.rows:
                writer.writerow(r)


def _outcome_values(outcome):
    return outcome.time if outcome.kind == "survival" else outcome.values


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean with shrinking windows at the edges."""
    n = len(values)
    half = window // 2
    out = np.empty(n)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = (csum[hi] - csum[lo]) / (hi - lo)
    return out


PLOT_KINDS = ("boxplot", "density", "interaction", "conditional")


def plot_data(obj, kind: str, outcome=None, trt=None) -> PlotData:
    """Tabular data behind the model/validation plots.

    For fitted models, `outcome` and `trt` are the training data columns
    (the model does not retain them).  Kinds: 'boxplot' (one row per
    subject), 'density' (per-group histograms), 'interaction' (cell means),
    'conditional' (outcomes by benefit score with a running-mean smoother,
    or the per-quantile estimates for validation reports).
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")

    if isinstance(obj, FittedSubgroupModel):
        if outcome is None or trt is None:
            raise ValueError("fitted-model plot data needs the outcome and treatment columns")
        y = _outcome_values(outcome)
        rec = obj.recommendations
        labels = trt.labels
        if kind == "boxplot":
            rows = [(f"recommended {rec[i]}", labels[i], float(y[i]))
                    for i in range(len(y))]
            return PlotData(kind, ["group", "treatment", "value"], rows)
        if kind == "density":
            rows = []
            edges = np.histogram_bin_edges(y, bins=20)
            for lv_rec in obj.levels:
                for lv_recv in obj.levels:
                    mask = np.asarray([rec[i] == lv_rec and labels[i] == lv_recv
                                       for i in range(len(y))], dtype=bool)
                    counts, _ = np.histogram(y[mask], bins=edges)
                    for b in range(len(edges) - 1):
                        rows.append((f"recommended {lv_rec}", lv_recv,
                                     float(edges[b]), float(edges[b + 1]),
                                     int(counts[b])))
            return PlotData(kind, ["group", "treatment", "bin_lo", "bin_hi", "count"], rows)
        if kind == "interaction":
            table = obj.effect_table
            rows = []
            for r, lv_recv in enumerate(table.levels):
                for m, lv_rec in enumerate(table.levels):
                    rows.append((f"recommended {lv_rec}", lv_recv,
                                 float(table.cell_stat[r, m]), int(table.cell_n[r, m])))
            return PlotData(kind, ["group", "treatment", "value", "n"], rows)
        # conditional: outcomes against the benefit score with smoothed means
        score = obj.benefit_scores[:, 0] if obj.benefit_scores.shape[1] == 1 \
            else obj.benefit_scores.max(axis=1)
        order = np.argsort(score, kind="stable")
        rows = []
        for lv in obj.levels:
            mask = np.asarray([labels[i] == lv for i in order], dtype=bool)
            idx = order[mask]
            if len(idx) == 0:
                continue
            window = max(11, len(idx) // 20)
            if window % 2 == 0:
                window += 1
            sm = _moving_average(y[idx], window)
            for k, i in enumerate(idx):
                rows.append((lv, float(score[i]), float(y[i]), float(sm[k])))
        return PlotData(kind, ["treatment", "score", "value", "smoothed"], rows)

    if isinstance(obj, ValidationReport):
        if kind in ("boxplot", "density", "interaction"):
            rows = []
            res = obj.overall
            for r_lv in obj.levels:
                for m_lv in obj.levels:
                    nm = f"mean[recv={r_lv},rec={m_lv}]"
                    j = res.stat_names.index(nm)
                    col = res.draws[:, j]
                    if kind == "interaction":
                        rows.append((f"recommended {m_lv}", r_lv,
                                     float(res.estimates[nm])))
                    else:
                        for b in range(len(col)):
                            if np.isfinite(col[b]):
                                rows.append((f"recommended {m_lv}", r_lv, b, float(col[b])))
            cols = (["group", "treatment", "value"] if kind == "interaction"
                    else ["group", "treatment", "replication", "value"])
            return PlotData(kind, cols, rows)
        # conditional: estimates across the benefit-score quantile grid
        rows = []
        for q, res in zip(obj.quantiles, obj.by_quantile):
            for r_lv in obj.levels:
                for m_lv in obj.levels:
                    nm = f"mean[recv={r_lv},rec={m_lv}]"
                    rows.append((float(q), f"recommended {m_lv}", r_lv,
                                 float(res.estimates[nm]), float(res.ses[nm])))
        return PlotData(kind, ["quantile", "group", "treatment", "value", "se"], rows)

    raise ValueError("plot data supports fitted models and validation reports")

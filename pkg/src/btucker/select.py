"""Feature-selection statistics.

Features get a chi-square statistic from their factor loadings, either
loadings over an optimized null standard deviation (factor route) or
posterior means over posterior variances (posterior route), and the
resulting P-values are Benjamini-Hochberg corrected before thresholding.

Component indices are 1-based throughout this module, matching the CLI and
report files (component 1 is the leading one).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from . import linalg
from .errors import DegenerateVarianceError, FileFormatError, SigmaOptimizationError

DEFAULT_THRESHOLD = 0.05
DEFAULT_BINS = 100
DEFAULT_EXCLUSION_THRESHOLD = 0.01

# Log-spaced candidate grid for the null-SD search, relative to the pooled
# sample SD of the selected components' loadings.
SIGMA_GRID_POINTS = 101
SIGMA_GRID_RANGE = (0.2, 5.0)


@dataclass(frozen=True)
class SelectionResult:
    statistic: np.ndarray      # per-feature chi-square sum (NaN when unknown)
    p_raw: np.ndarray
    p_adjusted: np.ndarray
    selected: np.ndarray       # boolean, p_adjusted <= threshold
    dof: int
    threshold: float

    @property
    def n_selected(self) -> int:
        return int(np.sum(self.selected))


@dataclass(frozen=True)
class SigmaFit:
    sigma: np.ndarray          # per-component null SD (shared value by default)
    sigma_h: float             # achieved histogram-occupancy SD
    bins: int
    exclusion_threshold: float


def chi2_sf(x, dof: int):
    """Upper-tail chi-square probability via the regularized incomplete gamma."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("chi-square statistic must be non-negative")
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    out = gammaincc(dof / 2.0, x / 2.0)
    return float(out) if out.ndim == 0 else out


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted P-values, in the input order."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("expected a 1-D vector of P-values")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValueError("P-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(ranked[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    out = np.empty_like(adjusted)
    out[order] = adjusted
    return out


def _component_indices(components, limit: int) -> np.ndarray:
    comps = np.array(sorted(set(int(c) for c in components)), dtype=int)
    if comps.size == 0:
        raise ValueError("components must be non-empty")
    if comps[0] < 1 or comps[-1] > limit:
        raise ValueError(f"components must lie in 1..{limit}, got {comps.tolist()}")
    return comps


def btud_statistic(
    means: np.ndarray, cov: np.ndarray, components, calibrate: bool = False
) -> np.ndarray:
    """Per-feature sum of squared posterior means over the null variances.

    The null variance of a component is its posterior variance S_ll.  With
    calibrate=True it is widened to the observed spread of that component's
    means across features, max(S_ll, Var_i m_li): when the data hold no
    outliers the two estimates agree in expectation (the noise precision is
    fitted from the same residuals), while outlying features widen the
    observed spread and make the statistic conservative instead of letting
    the outliers reject everything.  The experiment pipelines calibrate;
    the default is the plain posterior form.
    """
    means = np.asarray(means, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    comps = _component_indices(components, means.shape[0])
    var = np.diag(cov)[comps - 1].copy()
    for c, v in zip(comps, var):
        if v <= 0:
            raise DegenerateVarianceError(int(c), float(v))
    if calibrate:
        var = np.maximum(var, means[comps - 1].var(axis=1))
    return np.sum(means[comps - 1] ** 2 / var[:, None], axis=0)


def btud_pvalues(
    means: np.ndarray, cov: np.ndarray, components, calibrate: bool = False
) -> np.ndarray:
    comps = _component_indices(components, np.asarray(means).shape[0])
    return chi2_sf(btud_statistic(means, cov, components, calibrate=calibrate), dof=comps.size)


def td_statistic(u: np.ndarray, sigma, components) -> np.ndarray:
    """Per-feature sum of squared loadings over the null SD, per component."""
    u = np.asarray(u, dtype=np.float64)
    comps = _component_indices(components, u.shape[0])
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), comps.shape).copy()
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return np.sum((u[comps - 1] / sigma[:, None]) ** 2, axis=0)


def td_pvalues(u: np.ndarray, sigma, components) -> np.ndarray:
    comps = _component_indices(components, np.asarray(u).shape[0])
    return chi2_sf(td_statistic(u, sigma, components), dof=comps.size)


def optimize_sigma(
    u: np.ndarray,
    components,
    bins: int = DEFAULT_BINS,
    exclusion_threshold: float = DEFAULT_EXCLUSION_THRESHOLD,
    shared: bool = True,
) -> SigmaFit:
    """Pick the null SD that flattens the histogram of 1 - P over null features.

    Candidates are scanned on a log grid around the pooled sample SD of the
    selected components' loadings.  For each candidate, features with
    BH-adjusted P at or below `exclusion_threshold` are dropped, the rest of
    the 1 - P values are histogrammed into `bins` equal-width cells on [0, 1],
    and the SD of the occupancies is the objective.  Ties go to the smaller
    candidate.  With shared=False each component is optimized independently
    against its own single-component objective.
    """
    u = np.asarray(u, dtype=np.float64)
    comps = _component_indices(components, u.shape[0])
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if not shared and comps.size > 1:
        fits = [
            optimize_sigma(u, [c], bins=bins, exclusion_threshold=exclusion_threshold)
            for c in comps
        ]
        return SigmaFit(
            sigma=np.array([f.sigma[0] for f in fits]),
            sigma_h=float(np.max([f.sigma_h for f in fits])),
            bins=bins,
            exclusion_threshold=exclusion_threshold,
        )

    pooled = u[comps - 1].ravel()
    scale = float(np.std(pooled, ddof=1)) if pooled.size > 1 else float(np.abs(pooled[0]))
    if not np.isfinite(scale) or scale <= 0:
        raise SigmaOptimizationError("loadings have no spread; cannot calibrate a null SD")
    grid = scale * np.geomspace(SIGMA_GRID_RANGE[0], SIGMA_GRID_RANGE[1], SIGMA_GRID_POINTS)

    best_sigma = None
    best_obj = np.inf
    for cand in grid:
        p = td_pvalues(u, cand, comps)
        keep = bh_adjust(p) > exclusion_threshold
        if not np.any(keep):
            continue
        h, _ = np.histogram(1.0 - p[keep], bins=bins, range=(0.0, 1.0))
        obj = float(np.sqrt(np.mean((h - h.mean()) ** 2)))
        if obj < best_obj:  # strict: ties keep the earlier (smaller) candidate
            best_obj = obj
            best_sigma = float(cand)
    if best_sigma is None:
        raise SigmaOptimizationError("every candidate SD excluded all features")
    return SigmaFit(
        sigma=np.full(comps.size, best_sigma),
        sigma_h=best_obj,
        bins=bins,
        exclusion_threshold=exclusion_threshold,
    )


def rank_components_by_core(core: np.ndarray, fixed: dict) -> list[tuple[int, float]]:
    """Order mode-1 components by the largest |core| entry over fixed mode-2/3 indices.

    `fixed` maps mode number (2 and/or 3) to a 1-based index or iterable of
    indices; a missing mode ranges over all its components.  Returns
    (component, weight) pairs sorted by descending weight, ties to the
    smaller component.
    """
    core = np.asarray(core, dtype=np.float64)
    l1, l2, l3 = core.shape

    def _indices(mode: int, limit: int) -> np.ndarray:
        if mode not in fixed:
            return np.arange(1, limit + 1)
        value = fixed[mode]
        values = [value] if np.isscalar(value) else list(value)
        return _component_indices(values, limit)

    unknown = set(fixed) - {2, 3}
    if unknown:
        raise ValueError(f"fixed may only constrain modes 2 and 3, got {sorted(unknown)}")
    idx2 = _indices(2, l2) - 1
    idx3 = _indices(3, l3) - 1
    sub = np.abs(core[np.ix_(np.arange(l1), idx2, idx3)])
    weights = sub.reshape(l1, -1).max(axis=1)
    order = sorted(range(l1), key=lambda a: (-weights[a], a))
    return [(a + 1, float(weights[a])) for a in order]


def select_features(
    p_raw,
    threshold: float = DEFAULT_THRESHOLD,
    statistic: np.ndarray | None = None,
    dof: int = 1,
) -> SelectionResult:
    """BH-adjust raw P-values and keep features at or below the threshold."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    p_raw = np.asarray(p_raw, dtype=np.float64)
    adjusted = bh_adjust(p_raw)
    if statistic is None:
        statistic = np.full(p_raw.shape, np.nan)
    return SelectionResult(
        statistic=np.asarray(statistic, dtype=np.float64),
        p_raw=p_raw,
        p_adjusted=adjusted,
        selected=adjusted <= threshold,
        dof=int(dof),
        threshold=float(threshold),
    )


def svd_select(
    x: np.ndarray,
    components,
    mode: str = "btud",
    threshold: float = DEFAULT_THRESHOLD,
    bins: int = DEFAULT_BINS,
    exclusion_threshold: float = DEFAULT_EXCLUSION_THRESHOLD,
) -> SelectionResult:
    """Feature selection for matrix data (features are rows) through the SVD.

    mode "td" scores rows by their left-singular-vector loadings with an
    optimized null SD; mode "btud" treats the scaled right singular vectors
    as the regression design, forms the posterior mean/covariance of the row
    coefficients at alpha = 0 with the noise precision estimated from the
    residual of the selected-component reconstruction, and scores rows by the
    calibrated posterior chi-square sum (see :func:`btud_statistic`).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a matrix")
    comps = _component_indices(components, min(x.shape))
    res = linalg.svd(x, rank=int(comps.max()))

    if mode == "td":
        u_feat = res.U.T  # rows are components, columns are features
        fit = optimize_sigma(
            u_feat, comps, bins=bins, exclusion_threshold=exclusion_threshold
        )
        stat = td_statistic(u_feat, fit.sigma, comps)
    elif mode == "btud":
        phi = res.V[:, comps - 1] * res.s[comps - 1]  # columns: singular value * right vector
        approx = (res.U[:, comps - 1] * res.s[comps - 1]) @ res.V[:, comps - 1].T
        ssq = float(np.sum((x - approx) ** 2))
        beta = x.size / ssq if ssq > 0 else 1e12
        means = linalg.pseudoinverse(phi) @ x.T
        cov = linalg.pseudoinverse(beta * (phi.T @ phi))
        stat = btud_statistic(means, cov, range(1, comps.size + 1), calibrate=True)
    else:
        raise ValueError(f"mode must be 'td' or 'btud', got {mode!r}")

    p = chi2_sf(stat, dof=comps.size)
    return select_features(p, threshold=threshold, statistic=stat, dof=comps.size)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def write_selection_csv(result: SelectionResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_index", "statistic", "p_raw", "p_adjusted", "selected"])
        for i in range(result.p_raw.size):
            w.writerow(
                [
                    i + 1,
                    format(result.statistic[i], ".17g"),
                    format(result.p_raw[i], ".17g"),
                    format(result.p_adjusted[i], ".17g"),
                    int(result.selected[i]),
                ]
            )


def read_selection_csv(path) -> SelectionResult:
    """Read back a selection CSV.

    dof and threshold are not part of the file format; they are restored with
    placeholder values (dof 1, default threshold); only the per-feature
    columns round-trip.
    """
    stats, p_raw, p_adj, sel = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        try:
            for row in reader:
                stats.append(float(row["statistic"]))
                p_raw.append(float(row["p_raw"]))
                p_adj.append(float(row["p_adjusted"]))
                sel.append(bool(int(row["selected"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"unparsable selection CSV {path}: {exc}") from exc
    return SelectionResult(
        statistic=np.array(stats),
        p_raw=np.array(p_raw),
        p_adjusted=np.array(p_adj),
        selected=np.array(sel, dtype=bool),
        dof=1,
        threshold=DEFAULT_THRESHOLD,
    )

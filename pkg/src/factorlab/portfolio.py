"""Portfolio construction and the daily backtest loop.

Two constructions are provided:

  * hedged long-only (LH): a daily long-only optimization that maximizes the
    overlap between the book and the signal net of trading costs, under an
    AUM budget and a per-stock cap, hedged with a short index-futures
    overlay sized from rolling betas;

  * long-short (LS): a dollar-neutral book proportional to the demeaned
    signal, orthogonal to the leading mode of a cleaned correlation matrix,
    scaled to an annualized volatility target, with the same cost-aware
    trade tempering.

The long-only optimizer is a cyclic coordinate ascent with exact
per-coordinate line search (the objective is concave: linear signal term
minus a convex piecewise 3/2-power cost), plus pairwise exchange moves that
handle the budget coupling when the AUM constraint binds. The zero-cost
case is dispatched to the exact greedy solution of the underlying linear
program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costs import CostModelParams, trade_cost, financing_cost, borrow_cost
from .data import PoolMask, ReturnsPanel, month_start_indices


class PortfolioError(ValueError):
    """Invalid portfolio construction input or state."""


class InfeasibleConstraints(PortfolioError):
    """The requested constraint set has no feasible portfolio."""


@dataclass(frozen=True)
class Portfolio:
    """Dated snapshot of a book: stock notionals, index overlay, cash."""

    date: np.datetime64
    positions: np.ndarray
    hedge_notional: float
    cash: float
    aum: float

    def validate(self, mode: str, cap: float, tol: float = 1e-9) -> None:
        slack = tol * self.aum
        if mode == "LH":
            if np.any(self.positions < -slack):
                raise PortfolioError("long-only book has a short position")
            if np.sum(self.positions) > self.aum + slack:
                raise PortfolioError("long-only book exceeds the AUM budget")
        elif mode == "LS":
            if self.hedge_notional != 0.0:
                raise PortfolioError("long-short book must not carry an index hedge")
        else:
            raise PortfolioError(f"unknown mode {mode!r}")
        if np.any(np.abs(self.positions) > cap * self.aum + slack):
            raise PortfolioError("per-asset position cap violated")


# ---------------------------------------------------------------------------
# betas
# ---------------------------------------------------------------------------

def estimate_beta(asset_returns: np.ndarray, index_returns: np.ndarray,
                  min_obs: int | None = None) -> np.ndarray:
    """OLS slope of each asset on the index over the supplied window.

    Accepts a (W,) or (W, N) asset array; rows where either side is missing
    are dropped pairwise. Assets with fewer than min_obs joint observations
    (default: half the window) come back NaN.
    """
    y = np.asarray(asset_returns, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    x = np.asarray(index_returns, dtype=float)
    if len(x) != y.shape[0]:
        raise PortfolioError("asset and index windows differ in length")
    if min_obs is None:
        min_obs = max(2, y.shape[0] // 2)
    valid = np.isfinite(y) & np.isfinite(x)[:, None]
    xv = np.where(valid, x[:, None], 0.0)
    yv = np.where(valid, y, 0.0)
    n = np.sum(valid, axis=0)
    sx = np.sum(xv, axis=0)
    sy = np.sum(yv, axis=0)
    sxx = np.sum(xv * xv, axis=0)
    sxy = np.sum(xv * yv, axis=0)
    out = np.full(y.shape[1], np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = sxx - sx * sx / np.maximum(n, 1)
        num = sxy - sx * sy / np.maximum(n, 1)
        ok = (n >= min_obs) & (denom > 0)
        out[ok] = num[ok] / denom[ok]
    return float(out[0]) if squeeze else out


def rolling_betas(returns: np.ndarray, index_returns: np.ndarray,
                  window: int = 250, min_obs: int | None = None) -> np.ndarray:
    """Trailing-window betas for every date, windows ending at (including) t."""
    t_total, n = returns.shape
    if min_obs is None:
        min_obs = max(2, window // 2)
    valid = np.isfinite(returns) & np.isfinite(index_returns)[:, None]
    x = np.where(valid, index_returns[:, None], 0.0)
    y = np.where(valid, returns, 0.0)

    def cum(a):
        return np.vstack([np.zeros((1, n)), np.cumsum(a, axis=0)])

    cn = cum(valid.astype(float))
    cx, cy = cum(x), cum(y)
    cxx, cxy = cum(x * x), cum(x * y)
    out = np.full((t_total, n), np.nan)
    for t in range(t_total):
        lo = max(0, t - window + 1)
        cnt = cn[t + 1] - cn[lo]
        sx = cx[t + 1] - cx[lo]
        sy = cy[t + 1] - cy[lo]
        sxx = cxx[t + 1] - cxx[lo]
        sxy = cxy[t + 1] - cxy[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            denom = sxx - sx * sx / np.maximum(cnt, 1)
            ok = (cnt >= min_obs) & (denom > 0)
            out[t, ok] = (sxy[ok] - sx[ok] * sy[ok] / cnt[ok]) / denom[ok]
    return out


def rolling_vols(returns: np.ndarray, window: int = 250,
                 min_obs: int = 20) -> np.ndarray:
    """Trailing sample volatility (ddof=1) per asset, windows ending at t."""
    t_total, n = returns.shape
    valid = np.isfinite(returns)
    y = np.where(valid, returns, 0.0)
    cn = np.vstack([np.zeros((1, n)), np.cumsum(valid.astype(float), axis=0)])
    cy = np.vstack([np.zeros((1, n)), np.cumsum(y, axis=0)])
    cyy = np.vstack([np.zeros((1, n)), np.cumsum(y * y, axis=0)])
    out = np.full((t_total, n), np.nan)
    for t in range(t_total):
        lo = max(0, t - window + 1)
        cnt = cn[t + 1] - cn[lo]
        s = cy[t + 1] - cy[lo]
        ss = cyy[t + 1] - cyy[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            var = (ss - s * s / np.maximum(cnt, 1)) / np.maximum(cnt - 1, 1)
            ok = cnt >= min_obs
            out[t, ok] = np.sqrt(np.maximum(var[ok], 0.0))
    return out


# ---------------------------------------------------------------------------
# correlation cleaning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CleanedCorrelation:
    """Eigenvalue-clipped correlation matrix with per-asset daily vols.

    Eigenvalues below the pure-noise edge (1 + sqrt(N/T))^2 are replaced by
    their average (trace preserved), eigenvectors kept, and the diagonal
    renormalized back to one.
    """

    asset_indices: np.ndarray
    corr: np.ndarray
    vols: np.ndarray
    noise_edge: float
    n_clipped: int
    leading_eigenvector: np.ndarray
    leading_eigenvalue: float


def clean_correlation(returns_window: np.ndarray,
                      asset_indices: np.ndarray | None = None,
                      asset_names=None) -> CleanedCorrelation:
    """Clean the sample correlation matrix of a (T, N) return window."""
    x = np.asarray(returns_window, dtype=float)
    if x.ndim != 2:
        raise PortfolioError("returns window must be 2-D (days x assets)")
    t, n = x.shape
    if asset_indices is None:
        asset_indices = np.arange(n)
    if np.any(~np.isfinite(x)):
        raise PortfolioError("returns window contains missing values")
    if t < 60:
        raise PortfolioError(f"need at least 60 days to clean, got {t}")
    sd0 = np.std(x, axis=0)
    scale = np.maximum(np.mean(np.abs(x), axis=0), 1e-300)
    degenerate = np.all(x == x[0:1], axis=0) | (sd0 <= 1e-12 * scale)
    if np.any(degenerate):
        j = int(np.nonzero(degenerate)[0][0])
        name = asset_names[j] if asset_names is not None else f"column {j}"
        raise PortfolioError(f"degenerate (constant) return series: {name}")
    vols = np.std(x, axis=0, ddof=1)
    if n == 1:
        return CleanedCorrelation(
            asset_indices=np.asarray(asset_indices), corr=np.array([[1.0]]),
            vols=vols, noise_edge=(1.0 + math.sqrt(1.0 / t)) ** 2, n_clipped=0,
            leading_eigenvector=np.array([1.0]), leading_eigenvalue=1.0,
        )
    z = (x - np.mean(x, axis=0)) / sd0
    corr = z.T @ z / t
    corr = 0.5 * (corr + corr.T)
    eigvals, eigvecs = np.linalg.eigh(corr)
    edge = (1.0 + math.sqrt(n / t)) ** 2
    bulk = eigvals < edge
    n_clipped = int(np.sum(bulk))
    if n_clipped > 0:
        cleaned_vals = eigvals.copy()
        cleaned_vals[bulk] = float(np.mean(eigvals[bulk]))
        cleaned = (eigvecs * cleaned_vals) @ eigvecs.T
        d = np.sqrt(np.diag(cleaned))
        cleaned = cleaned / np.outer(d, d)
        cleaned = 0.5 * (cleaned + cleaned.T)
        np.fill_diagonal(cleaned, 1.0)
    else:
        cleaned = corr.copy()
        np.fill_diagonal(cleaned, 1.0)
    top_vals, top_vecs = np.linalg.eigh(cleaned)
    v = top_vecs[:, -1]
    if np.sum(v) < 0:
        v = -v
    return CleanedCorrelation(
        asset_indices=np.asarray(asset_indices), corr=cleaned, vols=vols,
        noise_edge=edge, n_clipped=n_clipped,
        leading_eigenvector=v, leading_eigenvalue=float(top_vals[-1]),
    )


# ---------------------------------------------------------------------------
# long-only optimizer
# ---------------------------------------------------------------------------

def project_capped_simplex(x: np.ndarray, cap: float, budget: float) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= cap, sum(w) <= budget}."""
    w = np.clip(x, 0.0, cap)
    if np.sum(w) <= budget:
        return w
    lo, hi = 0.0, float(np.max(x))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.sum(np.clip(x - mid, 0.0, cap)) > budget:
            lo = mid
        else:
            hi = mid
    return np.clip(x - hi, 0.0, cap)


def _greedy_fill(scores: np.ndarray, cap: float, budget: float,
                 floor_total: float = 0.0) -> np.ndarray:
    """Exact solution of max s.w over {0 <= w <= cap, sum w <= budget} plus
    an optional minimum-investment floor: fill best scores first."""
    n = len(scores)
    order = np.lexsort((np.arange(n), -scores))
    w = np.zeros(n)
    remaining = budget
    total = 0.0
    for i in order:
        if remaining <= 0:
            break
        if scores[i] <= 0 and total >= floor_total:
            break
        take = min(cap, remaining)
        w[i] = take
        remaining -= take
        total += take
    return w


def _piece_argmax(s: float, p: float, lin: float, k: float,
                  lo: float, hi: float) -> float:
    """argmax over [lo, hi] of s*w - lin*|w-p| - k*|w-p|^1.5 (concave)."""
    if s > lin:
        w = p + ((s - lin) / (1.5 * k)) ** 2 if k > 0 else math.inf
    elif s < -lin:
        w = p - ((-s - lin) / (1.5 * k)) ** 2 if k > 0 else -math.inf
    else:
        w = p
    return min(max(w, lo), hi)


def _piece_value(w, p, s, lin, k):
    d = np.abs(w - p)
    return s * w - lin * d - k * d ** 1.5


def _grad_up(w, p, s, lin, k):
    """Right derivative of the per-asset objective at w."""
    d = w - p
    if d > 0:
        return s - lin - 1.5 * k * math.sqrt(d)
    if d < 0:
        return s + lin + 1.5 * k * math.sqrt(-d)
    return s - lin


def _grad_down(w, p, s, lin, k):
    """Left derivative of the per-asset objective at w."""
    d = w - p
    if d > 0:
        return s - lin - 1.5 * k * math.sqrt(d)
    if d < 0:
        return s + lin + 1.5 * k * math.sqrt(-d)
    return s + lin


def optimize_long_only(scores: np.ndarray, prev_positions: np.ndarray,
                       adv: np.ndarray, sigma_daily: np.ndarray, aum: float,
                       cost_params: CostModelParams, cap: float = 0.03,
                       cost_aversion: float = 1.0, min_invested: float = 0.0,
                       tol: float = 1e-9, max_rounds: int = 200) -> np.ndarray:
    """Daily long-only book: maximize sum(w * score) - trading cost.

    Feasible set: w >= 0, w_i <= cap * aum, sum(w) <= aum. Assets without a
    price-impact input (missing or non-positive ADV, missing vol while impact
    is on) are frozen at their previous position and excluded from the
    optimization; a missing score counts as zero so the cost barrier decides
    whether the position survives.

    The returned book is feasible and its objective is at least the
    objective of not trading.
    """
    if aum <= 0:
        raise PortfolioError("aum must be positive")
    if not 0 < cap <= 1:
        raise PortfolioError("cap must be in (0, 1]")
    n = len(scores)
    s = np.where(np.isfinite(scores), np.asarray(scores, dtype=float), 0.0)
    prev = np.where(np.isfinite(prev_positions), prev_positions, 0.0)
    prev = np.maximum(prev, 0.0)

    free = cost_params.is_free or cost_aversion == 0.0
    if not free and cost_params.impact_coeff > 0:
        # impact pricing needs liquidity and vol inputs; without them the
        # position is frozen rather than traded blind
        tradable = np.isfinite(adv) & (np.asarray(adv) > 0) & np.isfinite(sigma_daily)
    else:
        tradable = np.ones(n, dtype=bool)
    frozen = ~tradable & (prev > 0)

    u = cap * aum
    n_free = int(np.sum(tradable))
    if min_invested > 0 and cap * n_free * aum < min_invested * aum * (1 - 1e-12):
        raise InfeasibleConstraints(
            "cap times tradable universe cannot reach the minimum investment"
        )
    budget = aum - float(np.sum(prev[frozen]))
    budget = max(budget, 0.0)

    out = np.zeros(n)
    out[frozen] = prev[frozen]
    idx = np.nonzero(tradable)[0]
    if len(idx) == 0:
        return out

    if free:
        out[idx] = _greedy_fill(s[idx], u, budget, floor_total=min_invested * aum)
        return out

    lin = cost_aversion * cost_params.linear_rate
    kv = np.zeros(len(idx))
    if cost_params.impact_coeff > 0:
        kv = cost_aversion * cost_params.impact_coeff * \
            np.asarray(sigma_daily, dtype=float)[idx] / np.sqrt(np.asarray(adv, dtype=float)[idx])
    sv = s[idx]
    pv = prev[idx]
    w = project_capped_simplex(pv, u, budget)

    def objective(wv):
        return float(np.sum(_piece_value(wv, pv, sv, lin, kv)))

    obj = objective(w)
    tol_abs = tol * max(aum, abs(obj))
    m = len(idx)
    for _ in range(max_rounds):
        round_start = obj
        # cyclic sweeps with exact per-coordinate line search
        for _ in range(50):
            slack = budget - float(np.sum(w))
            improved = 0.0
            for i in range(m):
                hi = min(u, w[i] + slack)
                wi = _piece_argmax(sv[i], pv[i], lin, kv[i], 0.0, hi)
                if wi != w[i]:
                    gain = _piece_value(wi, pv[i], sv[i], lin, kv[i]) - \
                        _piece_value(w[i], pv[i], sv[i], lin, kv[i])
                    if gain > 0:
                        slack -= wi - w[i]
                        w[i] = wi
                        improved += gain
            obj += improved
            if improved < tol_abs:
                break
        # pairwise exchanges when the budget binds
        slack = budget - float(np.sum(w))
        if slack <= 1e-9 * aum + tol_abs:
            for _ in range(10 * m):
                gup = np.array([
                    _grad_up(w[i], pv[i], sv[i], lin, kv[i]) if w[i] < u - 1e-12 * aum
                    else -math.inf for i in range(m)
                ])
                gdn = np.array([
                    _grad_down(w[j], pv[j], sv[j], lin, kv[j]) if w[j] > 1e-12 * aum
                    else math.inf for j in range(m)
                ])
                ups = np.argsort(-gup, kind="stable")[:16]
                dns = np.argsort(gdn, kind="stable")[:16]
                best_gain, best_move = 0.0, None
                for i in ups:
                    for j in dns:
                        if i == j or gup[i] - gdn[j] <= 0:
                            continue
                        dmax = min(u - w[i], w[j])
                        if dmax <= 0:
                            continue
                        lo_, hi_ = 0.0, dmax
                        if _grad_up(w[i] + dmax, pv[i], sv[i], lin, kv[i]) - \
                                _grad_down(w[j] - dmax, pv[j], sv[j], lin, kv[j]) >= 0:
                            step = dmax
                        else:
                            for _ in range(80):
                                mid = 0.5 * (lo_ + hi_)
                                d_phi = _grad_up(w[i] + mid, pv[i], sv[i], lin, kv[i]) \
                                    - _grad_down(w[j] - mid, pv[j], sv[j], lin, kv[j])
                                if d_phi > 0:
                                    lo_ = mid
                                else:
                                    hi_ = mid
                            step = lo_
                        if step <= 0:
                            continue
                        gain = (
                            _piece_value(w[i] + step, pv[i], sv[i], lin, kv[i])
                            - _piece_value(w[i], pv[i], sv[i], lin, kv[i])
                            + _piece_value(w[j] - step, pv[j], sv[j], lin, kv[j])
                            - _piece_value(w[j], pv[j], sv[j], lin, kv[j])
                        )
                        if gain > best_gain:
                            best_gain, best_move = gain, (i, j, step)
                if best_move is None or best_gain < tol_abs:
                    break
                i, j, step = best_move
                w[i] += step
                w[j] -= step
                obj += best_gain
        if obj - round_start < tol_abs:
            break

    if min_invested > 0:
        total = float(np.sum(w))
        floor = min_invested * aum
        if total < floor:
            order = np.lexsort((np.arange(m), -sv))
            for i in order:
                if total >= floor:
                    break
                add = min(u - w[i], floor - total)
                w[i] += add
                total += add

    out[idx] = np.clip(w, 0.0, u)
    return out


# ---------------------------------------------------------------------------
# hedging and the long-short book
# ---------------------------------------------------------------------------

def hedge_with_index(positions: np.ndarray, betas: np.ndarray,
                     asset_names=None) -> float:
    """Index-futures notional that zeroes the book's predicted beta."""
    pos = np.asarray(positions, dtype=float)
    b = np.asarray(betas, dtype=float)
    held = pos != 0.0
    bad = held & ~np.isfinite(b)
    if np.any(bad):
        j = int(np.nonzero(bad)[0][0])
        name = asset_names[j] if asset_names is not None else f"asset {j}"
        raise PortfolioError(f"missing beta for held position: {name}")
    return -float(np.sum(pos[held] * b[held]))


def _neutral_projection(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project onto {sum(w) = 0, v.w = 0} (orthonormalized constraint pair)."""
    k = len(w)
    e1 = np.full(k, 1.0 / math.sqrt(k))
    out = w - np.dot(w, e1) * e1
    u2 = v - np.dot(v, e1) * e1
    norm = float(np.linalg.norm(u2))
    if norm > 1e-12:
        e2 = u2 / norm
        out = out - np.dot(out, e2) * e2
    return out


def build_long_short(scores: np.ndarray, cleaned: CleanedCorrelation,
                     vol_target: float, aum: float,
                     prev_positions: np.ndarray, adv: np.ndarray,
                     cost_params: CostModelParams, cap: float = 0.03,
                     cost_aversion: float = 1.0, periods_per_year: int = 252,
                     max_iter: int = 100) -> tuple[np.ndarray, float, bool]:
    """Dollar-neutral, market-mode-neutral book scaled to a volatility target.

    scores/prev_positions/adv are full panel cross-sections; the book lives
    on cleaned.asset_indices (assets leaving that set are sold). Returns
    (positions, predicted annual vol as a fraction of aum, warning flag);
    the warning marks a target unreachable under the per-asset cap, in which
    case the book is the largest feasible scaled-down version.
    """
    if vol_target <= 0:
        raise PortfolioError("vol_target must be positive")
    if aum <= 0 or not 0 < cap <= 1:
        raise PortfolioError("bad aum or cap")
    idx = cleaned.asset_indices
    k = len(idx)
    s = np.where(np.isfinite(scores[idx]), scores[idx], 0.0)
    prev = np.where(np.isfinite(prev_positions[idx]), prev_positions[idx], 0.0)
    v = cleaned.leading_eigenvector
    sig = cleaned.vols
    target_daily_var = (vol_target * aum) ** 2 / periods_per_year
    u = cap * aum

    def daily_var(wv):
        ws = wv * sig
        return float(ws @ (cleaned.corr @ ws))

    d = _neutral_projection(s - np.mean(s), v)
    norm = float(np.linalg.norm(d))
    warning = False
    if norm < 1e-15 or k < 2:
        out = np.zeros(len(scores))
        return out, 0.0, True

    var0 = daily_var(d)
    if var0 <= 0:
        out = np.zeros(len(scores))
        return out, 0.0, True
    w = d * math.sqrt(target_daily_var / var0)

    def finalize(wv):
        nonlocal warning
        for _ in range(max_iter):
            wv = _neutral_projection(wv, v)
            var = daily_var(wv)
            if var <= 0:
                warning = True
                return np.zeros(k)
            wv = wv * math.sqrt(target_daily_var / var)
            if np.max(np.abs(wv)) <= u * (1.0 + 1e-9):
                return wv
            wv = np.clip(wv, -u, u)
        # caps keep biting: keep the neutral direction, drop the size until
        # the caps hold (pure rescaling preserves both neutrality constraints)
        wv = _neutral_projection(wv, v)
        mx = float(np.max(np.abs(wv)))
        if mx > 0:
            wv = wv * min(1.0, (u / mx) * (1.0 - 1e-12))
        var = daily_var(wv)
        if var > target_daily_var > 0 and var > 0:
            wv = wv * math.sqrt(target_daily_var / var)
        warning = True
        return wv

    w = finalize(w)

    if not (cost_params.is_free or cost_aversion == 0.0) and np.any(w != prev):
        lin = cost_aversion * cost_params.linear_rate
        adv_v = np.asarray(adv, dtype=float)[idx]
        kimp = np.zeros(k)
        if cost_params.impact_coeff > 0:
            ok = np.isfinite(adv_v) & (adv_v > 0)
            if not np.all(ok):
                raise PortfolioError("missing ADV on a long-short book asset")
            kimp = cost_aversion * cost_params.impact_coeff * sig / np.sqrt(adv_v)
        lo = np.minimum(prev, w)
        hi = np.maximum(prev, w)
        tempered = np.empty(k)
        for i in range(k):
            tempered[i] = _piece_argmax(s[i], prev[i], lin, kimp[i], lo[i], hi[i])
        w = finalize(tempered)

    out = np.zeros(len(scores))
    out[idx] = w
    pred_vol = math.sqrt(max(daily_var(w), 0.0) * periods_per_year) / aum
    return out, pred_vol, warning


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategyConfig:
    """Everything the daily loop needs besides the data itself."""

    mode: str                       # "LH" or "LS"
    aum: float = 1e9
    cap: float = 0.03
    vol_target: float = 0.05        # LS only, annual fraction of AUM
    cost_aversion: float = 1.0
    beta_window: int = 250
    cov_window: int = 250
    vol_window: int = 250
    exec_lag: int = 0
    min_invested: float = 0.0
    max_calendar_gap_days: int = 10

    def __post_init__(self):
        if self.mode not in ("LH", "LS"):
            raise PortfolioError(f"mode must be LH or LS, got {self.mode!r}")
        if self.exec_lag not in (0, 1):
            raise PortfolioError("exec_lag must be 0 or 1")


@dataclass
class BacktestResult:
    """Daily P&L decomposition plus realized books.

    Cost series are stored as non-positive P&L contributions and the total
    is their fixed-order sum with the return component, so the decomposition
    adds up exactly by construction.
    """

    dates: np.ndarray
    assets: tuple[str, ...]
    mode: str
    aum: float
    ret_pnl: np.ndarray
    trading_cost: np.ndarray
    financing_cost: np.ndarray
    borrow_cost: np.ndarray
    total_pnl: np.ndarray
    traded_notional: np.ndarray
    gross_stock: np.ndarray
    net_stock: np.ndarray
    hedge_notional: np.ndarray
    predicted_vol: np.ndarray
    positions: np.ndarray

    COLUMNS = (
        "ret_pnl", "trading_cost", "financing_cost", "borrow_cost",
        "total_pnl", "traded_notional", "gross_stock", "net_stock",
        "hedge_notional", "predicted_vol",
    )

    def equity_curve(self) -> np.ndarray:
        return np.cumsum(self.total_pnl)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("date," + ",".join(self.COLUMNS) + "\n")
            for i, d in enumerate(self.dates):
                cells = [str(d)]
                for c in self.COLUMNS:
                    x = getattr(self, c)[i]
                    cells.append(repr(float(x)) if np.isfinite(x) else "")
                fh.write(",".join(cells) + "\n")


def lh_matched_vol_targets(lh_result: BacktestResult, panel_dates: np.ndarray,
                           window: int = 250, min_obs: int = 60,
                           periods_per_year: int = 252) -> np.ndarray:
    """Per-day volatility targets equal to the hedged-long track's trailing
    realized vol, refreshed on month starts.

    The estimate at a refresh date uses the days strictly before it (up to
    `window`, at least `min_obs`, expanding until enough history exists) and
    is held until the next refresh. The earliest estimate backfills the days
    before it so every panel day carries a target.
    """
    rets = lh_result.total_pnl / lh_result.aum
    dates = lh_result.dates
    marks = set(month_start_indices(dates).tolist())
    targets = np.full(len(dates), np.nan)
    current = np.nan
    for i in range(len(dates)):
        if i in marks or (np.isnan(current) and i >= min_obs):
            lo = max(0, i - window)
            if i - lo >= min_obs:
                current = float(np.std(rets[lo:i], ddof=1)) \
                    * math.sqrt(periods_per_year)
        targets[i] = current
    finite = np.isfinite(targets)
    if not np.any(finite):
        raise PortfolioError("hedged-long track too short to estimate a vol target")
    targets[~finite] = targets[finite][0]

    out = np.full(len(panel_dates), np.nan)
    pos = {d: i for i, d in enumerate(panel_dates.tolist())}
    for i, d in enumerate(dates.tolist()):
        if d in pos:
            out[pos[d]] = targets[i]
    known = np.isfinite(out)
    first = int(np.argmax(known))
    out[:first] = out[first]
    for i in range(1, len(out)):
        if not np.isfinite(out[i]):
            out[i] = out[i - 1]
    return out


def read_backtest_csv(path, mode: str, aum: float) -> BacktestResult:
    """Round-trip loader for the daily CSV (positions are not serialized)."""
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header != ["date"] + list(BacktestResult.COLUMNS):
            raise PortfolioError(f"{path}: unexpected backtest CSV header")
        dates, cols = [], {c: [] for c in BacktestResult.COLUMNS}
        for row in reader:
            if not row:
                continue
            dates.append(np.datetime64(row[0], "D"))
            for c, cell in zip(BacktestResult.COLUMNS, row[1:]):
                cols[c].append(float(cell) if cell else np.nan)
    n = len(dates)
    return BacktestResult(
        dates=np.array(dates, dtype="datetime64[D]"), assets=(), mode=mode,
        aum=aum, positions=np.zeros((n, 0)),
        **{c: np.array(cols[c]) for c in BacktestResult.COLUMNS},
    )


def run_backtest(panel: ReturnsPanel, signal, config: StrategyConfig,
                 cost_params: CostModelParams,
                 index_returns: np.ndarray | None = None,
                 pool: PoolMask | None = None,
                 borrow_fees: np.ndarray | None = None,
                 start=None, end=None,
                 vol_target_series: np.ndarray | None = None) -> BacktestResult:
    """Daily loop: mark the book to market, refresh the signal, rebuild the
    target, trade at the close with costs, accrue financing and borrow.

    The signal argument is a SignalPanel (or bare (T, N) score array)
    aligned with the panel. LH needs index_returns aligned with the panel
    dates. vol_target_series (aligned with the panel, LS only) overrides the
    scalar target day by day where finite, letting the long-short book track
    another strategy's realized volatility. Deterministic: same inputs,
    bit-identical result.
    """
    scores_panel = getattr(signal, "scores", signal)
    ret = panel.field("ret")
    t_total, n = ret.shape
    if scores_panel.shape != (t_total, n):
        raise PortfolioError("signal is not aligned with the panel")
    adv_panel = panel.field("adv") if panel.has_field("adv") else np.full((t_total, n), np.nan)

    i0 = panel.date_index(start) if start is not None else 0
    i1 = panel.date_index(end) + 1 if end is not None else t_total
    if i1 <= i0:
        raise PortfolioError("empty backtest date range")
    gaps = np.diff(panel.dates[i0:i1].astype("datetime64[D]").astype(np.int64))
    if len(gaps) and np.max(gaps) > config.max_calendar_gap_days:
        at = panel.dates[i0 + int(np.argmax(gaps))]
        raise PortfolioError(
            f"calendar gap longer than {config.max_calendar_gap_days} days after {at}"
        )

    if config.mode == "LH":
        if index_returns is None:
            raise PortfolioError("LH needs an index series for the hedge")
        index_returns = np.asarray(index_returns, dtype=float)
        if len(index_returns) != t_total:
            raise PortfolioError("index series is not aligned with the panel")
        betas = rolling_betas(ret, index_returns, window=config.beta_window)
    else:
        betas = None

    sigma = rolling_vols(ret, window=config.vol_window)
    if borrow_fees is None:
        borrow_fees = np.full(n, cost_params.default_borrow_fee)

    rebal_set = set(month_start_indices(panel.dates).tolist())
    days = i1 - i0
    out = {c: np.zeros(days) for c in BacktestResult.COLUMNS}
    out["predicted_vol"][:] = np.nan
    positions_hist = np.zeros((days, n))

    w = np.zeros(n)
    hedge = 0.0
    cleaned: CleanedCorrelation | None = None

    for step, t in enumerate(range(i0, i1)):
        # 1. mark the carried book to market
        r = ret[t]
        fin_r = np.isfinite(r)
        pnl_ret = float(np.sum(w[fin_r] * r[fin_r]))
        if hedge != 0.0:
            r_idx = index_returns[t] if index_returns is not None else np.nan
            if not np.isfinite(r_idx):
                raise PortfolioError(f"missing index return on {panel.dates[t]}")
            pnl_ret += hedge * r_idx
            hedge *= 1.0 + r_idx
        w = np.where(fin_r, w * (1.0 + r), w)

        # 2. rebuild the target and trade at the close
        t_sig = max(t - config.exec_lag, 0)
        srow = scores_panel[t_sig].copy()
        if pool is not None:
            srow[~pool.mask[t]] = np.nan
        if config.mode == "LH":
            target = optimize_long_only(
                srow, w, adv_panel[t], sigma[t], config.aum, cost_params,
                cap=config.cap, cost_aversion=config.cost_aversion,
                min_invested=config.min_invested,
            )
            held = target != 0.0
            beta_row = betas[t]
            hedge_target = hedge_with_index(
                target, np.where(held, beta_row, 0.0), asset_names=panel.assets,
            ) if np.any(held) else 0.0
        else:
            if cleaned is None or t in rebal_set:
                lo = t - config.cov_window + 1
                eligible = np.isfinite(srow) if pool is None else pool.mask[t]
                if lo >= 0:
                    window_ok = np.all(np.isfinite(ret[lo:t + 1]), axis=0)
                    sd_ok = np.std(ret[max(lo, 0):t + 1], axis=0) > 0
                    eligible = eligible & window_ok & sd_ok
                else:
                    eligible = np.zeros(n, dtype=bool)
                idx = np.nonzero(eligible)[0]
                if len(idx) < 2:
                    raise PortfolioError(
                        f"fewer than two eligible assets for the long-short book "
                        f"on {panel.dates[t]}"
                    )
                cleaned = clean_correlation(
                    ret[t - config.cov_window + 1: t + 1][:, idx],
                    asset_indices=idx,
                    asset_names=[panel.assets[j] for j in idx],
                )
            vt = config.vol_target
            if vol_target_series is not None and np.isfinite(vol_target_series[t]):
                vt = float(vol_target_series[t])
            target, pred_vol, _warn = build_long_short(
                srow, cleaned, vt, config.aum, w, adv_panel[t],
                cost_params, cap=config.cap, cost_aversion=config.cost_aversion,
                periods_per_year=cost_params.trading_days_per_year,
            )
            out["predicted_vol"][step] = pred_vol
            hedge_target = 0.0

        trades = target - w
        traded = float(np.sum(np.abs(trades)))
        tc = 0.0
        if traded > 0 and not cost_params.is_free:
            live = np.abs(trades) > 0
            q = np.abs(trades[live])
            if cost_params.impact_coeff > 0:
                tc = float(np.sum(trade_cost(
                    q, adv_panel[t][live], sigma[t][live], cost_params,
                )))
            else:
                tc = float(np.sum(q)) * cost_params.linear_rate
        w = target
        hedge = hedge_target

        # 3. accrue financing and borrow on the end-of-day book
        gross = float(np.sum(np.abs(w))) + abs(hedge)
        fin = financing_cost(gross, config.aum, cost_params.financing_spread,
                             1.0, cost_params.trading_days_per_year)
        shorts = np.minimum(w, 0.0)
        bor = borrow_cost(shorts, borrow_fees, 1.0,
                          cost_params.trading_days_per_year)

        out["ret_pnl"][step] = pnl_ret
        out["trading_cost"][step] = -tc
        out["financing_cost"][step] = -fin
        out["borrow_cost"][step] = -bor
        total = pnl_ret - tc - fin - bor
        if not np.isfinite(total):
            raise PortfolioError(f"non-finite P&L on {panel.dates[t]}")
        out["total_pnl"][step] = total
        out["traded_notional"][step] = traded
        out["gross_stock"][step] = float(np.sum(np.abs(w)))
        out["net_stock"][step] = float(np.sum(w))
        out["hedge_notional"][step] = hedge
        positions_hist[step] = w

    return BacktestResult(
        dates=panel.dates[i0:i1], assets=panel.assets, mode=config.mode,
        aum=config.aum, positions=positions_hist,
        **out,
    )

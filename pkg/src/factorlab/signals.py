"""Factor descriptors, cross-sectional rank normalization, signal slowing,
and the residual-return predictability analysis.

Five descriptor recipes are built in:

    MOM       mean daily return over the 11 months ending one month ago
    VALUEEAR  earnings / price
    LOWVOL    minus the trailing 250-day return volatility
    SMB       minus the market cap (lagged 20 days, averaged over 40 days)
    ROA       net income / total assets

Signs are chosen so that a higher score is the side the premium is long
(low-volatility stocks, small caps); flip weights in `blend` to override.
Scores are rank-normalized to [-0.5, 0.5] per date, which makes a raw
signal dollar-neutral by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PoolMask, ReturnsPanel, forward_fill_field
from .toy_model import shorts_threshold


class SignalError(ValueError):
    """Invalid signal construction input."""


FACTOR_IDS = ("MOM", "VALUEEAR", "LOWVOL", "SMB", "ROA")

MOM_WINDOW = (252, 21)   # trading-day offsets, inclusive: 11 months lagged 1
MOM_MIN_OBS = 120
LOWVOL_WINDOW = 250
LOWVOL_MIN_OBS = 120
SMB_WINDOW = (59, 20)    # 40 days ending 20 days ago
SMB_MIN_OBS = 20


@dataclass(frozen=True)
class SignalPanel:
    """Date x asset normalized scores for one factor (or a blend)."""

    dates: np.ndarray
    assets: tuple[str, ...]
    scores: np.ndarray
    factor: str
    smoothed: bool = False

    def __post_init__(self):
        if self.scores.shape != (len(self.dates), len(self.assets)):
            raise SignalError("scores shape does not match dates x assets")
        self.scores.setflags(write=False)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ascending 1..n ranks with ties averaged."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    pos = np.arange(1, n + 1, dtype=float)
    starts = np.concatenate([[0], np.nonzero(np.diff(sorted_x) != 0)[0] + 1])
    ends = np.concatenate([starts[1:], [n]])
    avg = np.empty(n)
    for s, e in zip(starts, ends):
        avg[s:e] = 0.5 * (pos[s] + pos[e - 1])
    ranks = np.empty(n)
    ranks[order] = avg
    return ranks


def rank_normalize(values: np.ndarray) -> np.ndarray:
    """Map a cross-section to scores in [-0.5, 0.5].

    score = (rank - 0.5) / n_valid - 0.5 with ascending average ranks, so
    valid scores sum to zero and the map is invariant under any strictly
    monotone transform of the inputs. Cross-sections with fewer than two
    valid values come back fully masked.
    """
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    ok = np.isfinite(values)
    n = int(np.sum(ok))
    if n < 2:
        return out
    ranks = _average_ranks(values[ok])
    out[ok] = (ranks - 0.5) / n - 0.5
    return out


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

def _prepare(panel: ReturnsPanel) -> dict[str, np.ndarray]:
    prep: dict[str, np.ndarray] = {}
    if panel.has_field("ret"):
        prep["ret"] = panel.field("ret")
    if panel.has_field("price"):
        prep["price"] = panel.field("price")
    if panel.has_field("mcap"):
        prep["mcap"] = panel.field("mcap")
    for name in ("earnings", "net_income", "total_assets"):
        if panel.has_field(name):
            prep[name] = forward_fill_field(panel, name)
    return prep


def _window_mean(arr: np.ndarray, lo: int, hi: int, t: int, min_obs: int) -> np.ndarray:
    """Mean over rows t-lo .. t-hi inclusive; NaN where too little data."""
    n = arr.shape[1]
    if t - lo < 0:
        return np.full(n, np.nan)
    window = arr[t - lo : t - hi + 1]
    cnt = np.sum(np.isfinite(window), axis=0)
    out = np.full(n, np.nan)
    enough = cnt >= min_obs
    if np.any(enough):
        with np.errstate(invalid="ignore"):
            out[enough] = np.nanmean(window[:, enough], axis=0)
    return out


def _descriptor_mom(prep, t):
    return _window_mean(prep["ret"], *MOM_WINDOW, t=t, min_obs=MOM_MIN_OBS)


def _descriptor_lowvol(prep, t):
    ret = prep["ret"]
    n = ret.shape[1]
    if t - (LOWVOL_WINDOW - 1) < 0:
        return np.full(n, np.nan)
    window = ret[t - LOWVOL_WINDOW + 1 : t + 1]
    cnt = np.sum(np.isfinite(window), axis=0)
    out = np.full(n, np.nan)
    enough = cnt >= LOWVOL_MIN_OBS
    if np.any(enough):
        with np.errstate(invalid="ignore"):
            out[enough] = -np.nanstd(window[:, enough], axis=0, ddof=1)
    return out


def _descriptor_smb(prep, t):
    return -_window_mean(prep["mcap"], *SMB_WINDOW, t=t, min_obs=SMB_MIN_OBS)


def _descriptor_valueear(prep, t):
    price = prep["price"][t]
    earn = prep["earnings"][t]
    out = np.full(price.shape, np.nan)
    ok = np.isfinite(price) & np.isfinite(earn) & (price > 0)
    out[ok] = earn[ok] / price[ok]
    return out


def _descriptor_roa(prep, t):
    ni = prep["net_income"][t]
    ta = prep["total_assets"][t]
    out = np.full(ni.shape, np.nan)
    ok = np.isfinite(ni) & np.isfinite(ta) & (ta > 0)
    out[ok] = ni[ok] / ta[ok]
    return out


_DESCRIPTORS = {
    "MOM": (_descriptor_mom, ("ret",)),
    "VALUEEAR": (_descriptor_valueear, ("price", "earnings")),
    "LOWVOL": (_descriptor_lowvol, ("ret",)),
    "SMB": (_descriptor_smb, ("mcap",)),
    "ROA": (_descriptor_roa, ("net_income", "total_assets")),
}


def _check_fields(panel: ReturnsPanel, factor_id: str) -> None:
    if factor_id not in _DESCRIPTORS:
        raise SignalError(
            f"unknown factor {factor_id!r}; known: {', '.join(FACTOR_IDS)}"
        )
    missing = [f for f in _DESCRIPTORS[factor_id][1] if not panel.has_field(f)]
    if missing:
        raise SignalError(
            f"factor {factor_id!r} needs field(s) {', '.join(missing)} not in panel"
        )


def compute_descriptor(panel: ReturnsPanel, pool: PoolMask | None,
                       factor_id: str, date) -> np.ndarray:
    """Raw descriptor cross-section for one date, pool-masked."""
    _check_fields(panel, factor_id)
    t = panel.date_index(date)
    raw = _DESCRIPTORS[factor_id][0](_prepare(panel), t)
    if pool is not None:
        raw = np.where(pool.mask[t], raw, np.nan)
    return raw


def factor_signal(panel: ReturnsPanel, pool: PoolMask | None,
                  factor_id: str) -> SignalPanel:
    """Full rank-normalized signal panel for one descriptor recipe."""
    _check_fields(panel, factor_id)
    prep = _prepare(panel)
    kernel = _DESCRIPTORS[factor_id][0]
    t_n = (panel.n_dates, panel.n_assets)
    scores = np.full(t_n, np.nan)
    for t in range(panel.n_dates):
        raw = kernel(prep, t)
        if pool is not None:
            raw = np.where(pool.mask[t], raw, np.nan)
        scores[t] = rank_normalize(raw)
    return SignalPanel(dates=panel.dates, assets=panel.assets,
                       scores=scores, factor=factor_id)


def scores_from_values(panel: ReturnsPanel, values: np.ndarray,
                       factor: str) -> SignalPanel:
    """Rank-normalize arbitrary per-asset values into a constant-in-time
    signal panel (ground-truth loadings, externally supplied scores)."""
    row = rank_normalize(np.asarray(values, dtype=float))
    scores = np.tile(row, (panel.n_dates, 1))
    return SignalPanel(dates=panel.dates, assets=panel.assets,
                       scores=scores, factor=factor)


# ---------------------------------------------------------------------------
# slowing and blending
# ---------------------------------------------------------------------------

def smooth_ema(signal: SignalPanel, span_days: int = 150) -> SignalPanel:
    """Exponential moving average with lam = 2 / (span + 1).

    Assets initialize at their first valid raw score. On masked days the
    state is carried unchanged (and the output stays masked), so a gap does
    not reset the average. To read the smoothing length as a half-life h
    instead of a span, pass span_days = 2 / (1 - 0.5 ** (1 / h)) - 1.
    """
    if span_days < 1:
        raise SignalError("span_days must be positive")
    lam = 2.0 / (span_days + 1.0)
    raw = signal.scores
    out = np.full(raw.shape, np.nan)
    state = np.full(raw.shape[1], np.nan)
    for t in range(raw.shape[0]):
        valid = np.isfinite(raw[t])
        fresh = valid & ~np.isfinite(state)
        state[fresh] = raw[t, fresh]
        cont = valid & ~fresh
        state[cont] = (1.0 - lam) * state[cont] + lam * raw[t, cont]
        out[t, valid] = state[valid]
    return SignalPanel(dates=signal.dates, assets=signal.assets,
                       scores=out, factor=signal.factor, smoothed=True)


def blend(signals: list[SignalPanel], weights) -> SignalPanel:
    """Weighted cell-wise combination of signals on a shared calendar.

    Each cell averages over the factors valid there, renormalized by the
    sum of their weights, so a factor going missing does not shrink the
    combined score.
    """
    if not signals:
        raise SignalError("blend needs at least one signal")
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(signals) or not np.all(np.isfinite(weights)):
        raise SignalError("need one finite weight per signal")
    first = signals[0]
    for s in signals[1:]:
        if not np.array_equal(s.dates, first.dates) or s.assets != first.assets:
            raise SignalError("signals must share the same calendar and assets")
    num = np.zeros(first.scores.shape)
    den = np.zeros(first.scores.shape)
    for s, w in zip(signals, weights):
        valid = np.isfinite(s.scores)
        num += np.where(valid, w * s.scores, 0.0)
        den += np.where(valid, w, 0.0)
    out = np.full(first.scores.shape, np.nan)
    ok = den != 0.0
    out[ok] = num[ok] / den[ok]
    name = "+".join(s.factor for s in signals)
    return SignalPanel(dates=first.dates, assets=first.assets, scores=out,
                       factor=name, smoothed=all(s.smoothed for s in signals))


# ---------------------------------------------------------------------------
# residual returns and predictability
# ---------------------------------------------------------------------------

def residual_returns(panel: ReturnsPanel, lookback_days: int = 250,
                     pool: PoolMask | None = None,
                     min_frac: float = 0.8) -> np.ndarray:
    """Strip each stock's projection on the leading correlation mode.

    Per date t, the leading eigenvector of the trailing correlation matrix
    of daily returns defines a market-mode series; each stock's return is
    regressed on it over the same window and the fitted component removed:
    resid_i = r_i - beta_i * mode_t.

    Assets need at least min_frac of the window valid (gaps are mean-imputed
    in the standardized returns). Returns a (T, N) array, NaN where
    undefined.
    """
    ret = panel.field("ret")
    t_total, n = ret.shape
    out = np.full((t_total, n), np.nan)
    if lookback_days < 10:
        raise SignalError("lookback_days too short")
    min_obs = int(np.ceil(min_frac * lookback_days))
    for t in range(lookback_days - 1, t_total):
        window = ret[t - lookback_days + 1 : t + 1]
        cnt = np.sum(np.isfinite(window), axis=0)
        use = (cnt >= min_obs) & np.isfinite(ret[t])
        if pool is not None:
            use &= pool.mask[t]
        idx = np.nonzero(use)[0]
        if len(idx) < 2:
            continue
        x = window[:, idx]
        mu = np.nanmean(x, axis=0)
        sd = np.nanstd(x, axis=0)
        pos = sd > 0
        idx = idx[pos]
        if len(idx) < 2:
            continue
        z = (x[:, pos] - mu[pos]) / sd[pos]
        z[~np.isfinite(z)] = 0.0
        corr = z.T @ z / z.shape[0]
        eigvals, eigvecs = np.linalg.eigh(corr)
        v = eigvecs[:, -1]
        if np.sum(v) < 0:
            v = -v
        mode = z @ v
        var_mode = float(mode @ mode)
        if var_mode <= 0:
            continue
        betas = sd[pos] * (z.T @ mode) / var_mode
        out[t, idx] = ret[t, idx] - betas * mode[-1]
    return out


@dataclass(frozen=True)
class PredictabilityCurve:
    """Binned descriptor-vs-future-residual curve with per-side slopes.

    The two slopes are fit jointly by weighted least squares with one shared
    intercept: residualizing against the leading mode removes the
    cross-sectional average response, which shows up as a common offset of
    the whole curve, and a through-origin fit would fold that offset into
    the slopes and bias their ratio toward one. slope_ratio compares the
    short side to the long side and is read against the accretive-shorts
    threshold.
    """

    bin_x: np.ndarray
    bin_y: np.ndarray
    bin_se: np.ndarray
    bin_count: np.ndarray
    intercept: float
    positive_slope: float
    negative_slope: float
    positive_slope_se: float
    negative_slope_se: float
    slope_ratio: float
    n_obs: int
    threshold: float = field(default_factory=lambda: float(shorts_threshold(1.0)))

    @property
    def above_threshold(self) -> bool:
        return bool(np.isfinite(self.slope_ratio) and self.slope_ratio > self.threshold)


def _forward_mean(resid: np.ndarray, horizon_days: int) -> np.ndarray:
    """Mean residual over [t+1, t+horizon]; NaN unless the window is full."""
    t_total, n = resid.shape
    filled = np.where(np.isfinite(resid), resid, 0.0)
    cum = np.vstack([np.zeros(n), np.cumsum(filled, axis=0)])
    cnt = np.vstack([np.zeros(n), np.cumsum(np.isfinite(resid), axis=0)])
    out = np.full((t_total, n), np.nan)
    last = t_total - horizon_days
    if last <= 0:
        return out
    sums = cum[1 + horizon_days : 1 + horizon_days + last] - cum[1:1 + last]
    counts = cnt[1 + horizon_days : 1 + horizon_days + last] - cnt[1:1 + last]
    full = counts == horizon_days
    rows = out[:last]
    rows[full] = sums[full] / horizon_days
    return out


def _bin_weights(se: np.ndarray) -> np.ndarray:
    """Inverse-variance weights; degenerate bins borrow the largest weight."""
    se = np.asarray(se, dtype=float)
    w = np.empty(len(se))
    usable = np.isfinite(se) & (se > 0)
    if np.any(usable):
        w[usable] = 1.0 / se[usable] ** 2
        w[~usable] = np.max(w[usable])
    else:
        w[:] = 1.0
    return w


def _solve_wls(x_cols: list[np.ndarray], y: np.ndarray, w: np.ndarray):
    """Weighted normal equations; returns (theta, standard errors) or None
    when the system is singular."""
    design = np.column_stack(x_cols)
    a = design.T @ (w[:, None] * design)
    b = design.T @ (w * y)
    if np.linalg.cond(a) > 1e12:
        return None
    theta = np.linalg.solve(a, b)
    ses = np.sqrt(np.diag(np.linalg.inv(a)))
    return theta, ses


def _two_slope_fit(bin_x, bin_y, bin_se):
    """Per-sign slopes with one shared intercept.

    Returns (intercept, pos_slope, neg_slope, pos_se, neg_se). A side whose
    bins do not span at least two distinct abscissas leaves its slope
    undefined; if only one side is identifiable it is fit alone with its
    own intercept.
    """
    w = _bin_weights(bin_se)
    pos = bin_x > 0
    neg = bin_x < 0
    pos_ok = len(np.unique(bin_x[pos])) >= 2
    neg_ok = len(np.unique(bin_x[neg])) >= 2
    ones = np.ones(len(bin_x))
    if pos_ok and neg_ok:
        fit = _solve_wls(
            [ones, np.where(pos, bin_x, 0.0), np.where(neg, bin_x, 0.0)],
            bin_y, w,
        )
        if fit is not None:
            (b0, sp, sn), (_, ep, en) = fit
            return float(b0), float(sp), float(sn), float(ep), float(en)
        pos_ok = neg_ok = False
    if pos_ok:
        fit = _solve_wls([ones[pos], bin_x[pos]], bin_y[pos], w[pos])
        if fit is not None:
            (b0, sp), (_, ep) = fit
            return float(b0), float(sp), np.nan, float(ep), np.nan
    if neg_ok:
        fit = _solve_wls([ones[neg], bin_x[neg]], bin_y[neg], w[neg])
        if fit is not None:
            (b0, sn), (_, en) = fit
            return float(b0), np.nan, float(sn), np.nan, float(en)
    return np.nan, np.nan, np.nan, np.nan, np.nan


def predictability_curve(scores, resid: np.ndarray, horizon_days: int = 21,
                         n_bins: int = 20) -> PredictabilityCurve:
    """Pool (score, future mean residual) pairs into equal-count bins and
    fit a through-origin line per predictor sign.

    Sides with fewer than two bins leave their slope (and the ratio)
    undefined.
    """
    if horizon_days < 1:
        raise SignalError("horizon_days must be at least 1")
    if n_bins < 2:
        raise SignalError("n_bins must be at least 2")
    score_arr = scores.scores if isinstance(scores, SignalPanel) else np.asarray(scores)
    if score_arr.shape != resid.shape:
        raise SignalError("scores and residuals must be aligned")
    y = _forward_mean(resid, horizon_days)
    ok = np.isfinite(score_arr) & np.isfinite(y)
    x = score_arr[ok]
    yv = y[ok]
    if len(x) < n_bins:
        raise SignalError("not enough observations to bin")
    order = np.argsort(x, kind="stable")
    chunks = [c for c in np.array_split(order, n_bins) if len(c) > 0]
    bin_x = np.array([float(np.mean(x[c])) for c in chunks])
    bin_y = np.array([float(np.mean(yv[c])) for c in chunks])
    bin_count = np.array([len(c) for c in chunks])
    bin_se = np.array([
        float(np.std(yv[c], ddof=1) / np.sqrt(len(c))) if len(c) > 1 else np.nan
        for c in chunks
    ])
    intercept, pos_slope, neg_slope, pos_se, neg_se = _two_slope_fit(
        bin_x, bin_y, bin_se,
    )
    if np.isfinite(pos_slope) and np.isfinite(neg_slope) and pos_slope != 0:
        ratio = neg_slope / pos_slope
    else:
        ratio = np.nan
    return PredictabilityCurve(
        bin_x=bin_x, bin_y=bin_y, bin_se=bin_se, bin_count=bin_count,
        intercept=intercept, positive_slope=pos_slope, negative_slope=neg_slope,
        positive_slope_se=pos_se, negative_slope_se=neg_se,
        slope_ratio=ratio, n_obs=int(len(x)),
    )


@dataclass(frozen=True)
class BootstrapCI:
    """Slope-ratio percentile band plus bootstrap slope inference.

    The per-side slope standard errors here are the honest ones: naive
    per-bin errors ignore both the overlap of consecutive forward windows
    (a horizon-fold variance understatement) and cross-sectional residual
    correlation, which the block/asset resampling captures.
    """

    point: float
    lo: float
    hi: float
    samples: np.ndarray
    positive_slope: float
    positive_slope_se: float
    negative_slope: float
    negative_slope_se: float


def bootstrap_slope_ratio(scores, resid: np.ndarray, horizon_days: int = 21,
                          n_boot: int = 200, seed: int = 0,
                          block_days: int | None = None) -> BootstrapCI:
    """Block bootstrap over dates crossed with an asset bootstrap.

    The slope noise has three components: common time-series swings plus
    the serial correlation injected by overlapping forward windows (handled
    by resampling contiguous date blocks of about twice the horizon), and a
    cross-sectional part where each asset's realized mean residual acts as
    a fixed effect (handled by resampling assets). Every (date, asset) pair
    is weighted by the product of its multiplicities. Reports the 95%
    percentile band of the ratio and bootstrap standard errors for both
    slopes; the point estimates are the unbinned raw-pair fit of the same
    shared-intercept two-slope model the curve uses.
    """
    score_arr = scores.scores if isinstance(scores, SignalPanel) else np.asarray(scores)
    y = _forward_mean(resid, horizon_days)
    ok = np.isfinite(score_arr) & np.isfinite(y)
    if not np.any(ok):
        raise SignalError("no usable observations for the bootstrap")
    if block_days is None:
        block_days = 2 * horizon_days
    xp = np.where(ok & (score_arr > 0), score_arr, 0.0)
    xn = np.where(ok & (score_arr < 0), score_arr, 0.0)
    yy = np.where(ok, y, 0.0)
    # (T, N) entries of X'X and X'y for design columns (1, x_pos, x_neg)
    mats = {
        "n": ok.astype(float),
        "sxp": xp,
        "sxn": xn,
        "sxxp": xp * xp,
        "sxxn": xn * xn,
        "sy": yy,
        "sxyp": xp * yy,
        "sxyn": xn * yy,
    }
    t, n = ok.shape
    block = min(block_days, t)
    n_blocks = max(1, int(np.ceil(t / block)))

    def slopes(date_mult, asset_mult):
        tot = {k: float(date_mult @ m @ asset_mult) for k, m in mats.items()}
        a = np.array([
            [tot["n"], tot["sxp"], tot["sxn"]],
            [tot["sxp"], tot["sxxp"], 0.0],
            [tot["sxn"], 0.0, tot["sxxn"]],
        ])
        b = np.array([tot["sy"], tot["sxyp"], tot["sxyn"]])
        if tot["sxxp"] <= 0 or tot["sxxn"] <= 0 or np.linalg.cond(a) > 1e12:
            return np.nan, np.nan
        _, sp, sn = np.linalg.solve(a, b)
        return sp, sn

    point_sp, point_sn = slopes(np.ones(t), np.ones(n))
    rng = np.random.Generator(np.random.Philox(seed))
    sp_samples = np.empty(n_boot)
    sn_samples = np.empty(n_boot)
    for k in range(n_boot):
        dm = np.zeros(t)
        starts = rng.integers(0, max(t - block, 0) + 1, size=n_blocks)
        for s in starts:
            dm[s:s + block] += 1.0
        am = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        sp_samples[k], sn_samples[k] = slopes(dm, am)
    with np.errstate(invalid="ignore", divide="ignore"):
        samples = sn_samples / sp_samples
    finite = samples[np.isfinite(samples)]
    if len(finite) < max(10, n_boot // 2):
        raise SignalError("bootstrap produced too few finite ratios")
    lo, hi = np.percentile(finite, [2.5, 97.5])
    point = point_sn / point_sp if point_sp not in (0.0,) else np.nan
    return BootstrapCI(
        point=float(point), lo=float(lo), hi=float(hi), samples=samples,
        positive_slope=float(point_sp),
        positive_slope_se=float(np.nanstd(sp_samples, ddof=1)),
        negative_slope=float(point_sn),
        negative_slope_se=float(np.nanstd(sn_samples, ddof=1)),
    )

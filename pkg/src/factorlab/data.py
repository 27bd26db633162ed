"""Panel storage, CSV ingestion, Fama-French 2x3 building blocks, and
liquidity-based pool selection.

Panels are rectangular date x asset stores. Missing cells are NaN and every
computation in the package treats NaN as "not there" rather than zero.
Panels are frozen after construction (arrays are marked read-only).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

PANEL_FIELDS = (
    "ret",
    "price",
    "adv",
    "mcap",
    "earnings",
    "net_income",
    "total_assets",
    "borrow_fee",
)

# forward-filled by `forward_fill_field` (annual reporting cadence)
FUNDAMENTAL_FIELDS = ("earnings", "net_income", "total_assets", "borrow_fee")

DEFAULT_POOL_COUNTS = {"NA": 1200, "EU": 1000, "JP": 900, "AU": 200}

DEFAULT_FFILL_LIMIT_DAYS = 370


class PanelError(ValueError):
    """Malformed panel input or inconsistent panel operation."""


def _fmt(x: float) -> str:
    """Shortest round-trip decimal form; empty string for missing."""
    if not np.isfinite(x):
        return ""
    return repr(float(x))


@dataclass(frozen=True)
class ReturnsPanel:
    """Date x asset rectangular store of returns, prices, volumes and
    fundamentals.

    dates    strictly increasing trading days (datetime64[D])
    assets   asset identifiers, lexicographically sorted
    regions  region tag per asset (free-form strings, matched against config)
    arrays   field name -> (T, N) float64 matrix, NaN = missing
    """

    dates: np.ndarray
    assets: tuple[str, ...]
    regions: tuple[str, ...]
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dates.ndim != 1 or len(self.dates) == 0:
            raise PanelError("panel needs at least one date")
        if np.any(np.diff(self.dates.astype("datetime64[D]").astype(np.int64)) <= 0):
            raise PanelError("dates must be strictly increasing")
        if len(self.assets) != len(self.regions):
            raise PanelError("assets and regions length mismatch")
        t, n = len(self.dates), len(self.assets)
        for name, arr in self.arrays.items():
            if name not in PANEL_FIELDS:
                raise PanelError(
                    f"unknown field {name!r}; known fields: {', '.join(PANEL_FIELDS)}"
                )
            if arr.shape != (t, n):
                raise PanelError(f"field {name!r} has shape {arr.shape}, want {(t, n)}")
            arr.setflags(write=False)
        self.dates.setflags(write=False)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def field(self, name: str) -> np.ndarray:
        if name not in self.arrays:
            raise PanelError(
                f"field {name!r} not loaded; available: {', '.join(sorted(self.arrays))}"
            )
        return self.arrays[name]

    def has_field(self, name: str) -> bool:
        return name in self.arrays

    def valid(self, name: str) -> np.ndarray:
        return np.isfinite(self.field(name))

    def date_index(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self.dates) or self.dates[i] != d:
            raise PanelError(f"date {d} not in panel")
        return i

    def asset_index(self, asset: str) -> int:
        try:
            return self.assets.index(asset)
        except ValueError:
            raise PanelError(f"asset {asset!r} not in panel") from None


@dataclass(frozen=True)
class PoolMask:
    """Monthly-rebalanced stock pool membership.

    mask is (T, N) bool; membership only changes on rebalance dates.
    """

    dates: np.ndarray
    assets: tuple[str, ...]
    mask: np.ndarray
    rebalance_indices: np.ndarray

    def __post_init__(self):
        self.mask.setflags(write=False)


def business_days(start, n: int) -> np.ndarray:
    """n consecutive weekdays starting on/after `start` (synthetic calendars)."""
    start64 = np.datetime64(start, "D")
    return np.busday_offset(start64, np.arange(n), roll="forward")


# ---------------------------------------------------------------------------
# generic panel CSV
# ---------------------------------------------------------------------------

def load_panel(path) -> ReturnsPanel:
    """Load a long-format panel CSV.

    Expected header: date,asset_id[,region],<field columns>. Field columns
    must be a subset of PANEL_FIELDS. Empty cells are missing. Loading is
    order-independent: rows may come in any order, the panel is a normal
    form (dates ascending, assets sorted).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "date" or header[1] != "asset_id":
            raise PanelError(f"{path}: header must start with date,asset_id")
        col = 2
        has_region = col < len(header) and header[col] == "region"
        if has_region:
            col += 1
        field_cols = header[col:]
        unknown = [c for c in field_cols if c not in PANEL_FIELDS]
        if unknown:
            raise PanelError(
                f"{path}: unknown field column(s) {', '.join(unknown)}; "
                f"known fields: {', '.join(PANEL_FIELDS)}"
            )
        if not field_cols:
            raise PanelError(f"{path}: no field columns")

        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != len(header):
                raise PanelError(
                    f"{path}: line {lineno}: expected {len(header)} cells, got {len(raw)}"
                )
            try:
                date = np.datetime64(raw[0].strip(), "D")
            except ValueError:
                raise PanelError(f"{path}: line {lineno}: bad date {raw[0]!r}") from None
            asset = raw[1].strip()
            if not asset:
                raise PanelError(f"{path}: line {lineno}: empty asset_id")
            region = raw[2].strip() if has_region else ""
            values = []
            for name, cell in zip(field_cols, raw[col:]):
                cell = cell.strip()
                if cell == "":
                    values.append(np.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise PanelError(
                        f"{path}: line {lineno}: bad value {cell!r} for field {name!r}"
                    ) from None
            rows.append((date, asset, region, values, lineno))

    if not rows:
        raise PanelError(f"{path}: no data rows")

    dates = np.array(sorted({r[0] for r in rows}), dtype="datetime64[D]")
    assets = tuple(sorted({r[1] for r in rows}))
    date_idx = {d: i for i, d in enumerate(dates.tolist())}
    asset_idx = {a: i for i, a in enumerate(assets)}

    regions = [None] * len(assets)
    arrays = {name: np.full((len(dates), len(assets)), np.nan) for name in field_cols}
    seen: set[tuple[int, int]] = set()
    for date, asset, region, values, lineno in rows:
        i = date_idx[date.astype("datetime64[D]").item()]
        j = asset_idx[asset]
        if (i, j) in seen:
            raise PanelError(f"{path}: line {lineno}: duplicate (date, asset) ({date}, {asset})")
        seen.add((i, j))
        if regions[j] is None:
            regions[j] = region
        elif regions[j] != region:
            raise PanelError(
                f"{path}: line {lineno}: asset {asset!r} has conflicting regions "
                f"{regions[j]!r} and {region!r}"
            )
        for name, v in zip(field_cols, values):
            arrays[name][i, j] = v

    return ReturnsPanel(
        dates=dates,
        assets=assets,
        regions=tuple(r or "" for r in regions),
        arrays=arrays,
    )


def write_panel(panel: ReturnsPanel, path, fields=None) -> None:
    """Write a panel in the same long-format layout `load_panel` reads.

    Emits one row per (date, asset) cell that carries at least one valid
    field, in normal-form order. write(load(f)) is a stable normal form:
    re-loading and re-writing reproduces the file byte for byte.
    """
    names = list(fields) if fields is not None else [
        f for f in PANEL_FIELDS if f in panel.arrays
    ]
    for f in names:
        panel.field(f)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset_id", "region"] + names)
        mats = [panel.arrays[f] for f in names]
        any_valid = np.zeros((panel.n_dates, panel.n_assets), dtype=bool)
        for m in mats:
            any_valid |= np.isfinite(m)
        for i, d in enumerate(panel.dates):
            day = str(d)
            for j in np.nonzero(any_valid[i])[0]:
                w.writerow(
                    [day, panel.assets[j], panel.regions[j]]
                    + [_fmt(m[i, j]) for m in mats]
                )


def forward_fill_field(panel: ReturnsPanel, name: str,
                       limit_days: int = DEFAULT_FFILL_LIMIT_DAYS) -> np.ndarray:
    """Forward-fill a slow-moving field, expiring stale values.

    A value observed on day s is carried to day t while (t - s) is at most
    `limit_days` calendar days; beyond that the cell goes back to missing.
    Returns a fresh writable array; the panel itself is never mutated.
    """
    raw = panel.field(name)
    t, n = raw.shape
    out = raw.copy()
    day_num = panel.dates.astype("datetime64[D]").astype(np.int64)
    last_val = np.full(n, np.nan)
    last_day = np.full(n, -(10 ** 9), dtype=np.int64)
    for i in range(t):
        fresh = np.isfinite(raw[i])
        last_val[fresh] = raw[i, fresh]
        last_day[fresh] = day_num[i]
        stale = ~fresh
        usable = stale & np.isfinite(last_val) & (day_num[i] - last_day <= limit_days)
        out[i, usable] = last_val[usable]
    return out


# ---------------------------------------------------------------------------
# liquidity pool
# ---------------------------------------------------------------------------

def month_start_indices(dates: np.ndarray) -> np.ndarray:
    """Index of the first trading day of each calendar month present."""
    months = dates.astype("datetime64[M]")
    first = np.ones(len(dates), dtype=bool)
    first[1:] = months[1:] != months[:-1]
    return np.nonzero(first)[0]


def select_pool(panel: ReturnsPanel,
                adv_window_days: int = 180,
                counts_by_region: Mapping[str, int] | None = None,
                min_valid_days: int = 60) -> PoolMask:
    """Monthly-rebalanced liquidity pool: per region, the top-k assets by
    trailing mean ADV.

    The trailing window ends the day before the rebalance date. Assets need
    at least `min_valid_days` valid ADV observations in the window to be
    eligible. When fewer eligible assets exist than the configured count,
    the selection clamps to what is available.
    """
    if counts_by_region is None:
        counts_by_region = DEFAULT_POOL_COUNTS
    adv = panel.field("adv")
    regions = np.array(panel.regions)
    for region, count in counts_by_region.items():
        if count <= 0:
            raise PanelError(f"pool count for region {region!r} must be positive")
        if not np.any(regions == region):
            raise PanelError(f"region {region!r} has no assets in the panel")

    t, n = adv.shape
    mask = np.zeros((t, n), dtype=bool)
    rebal = month_start_indices(panel.dates)
    current = np.zeros(n, dtype=bool)
    boundaries = list(rebal) + [t]
    for k, start in enumerate(rebal):
        lo = max(0, start - adv_window_days)
        window = adv[lo:start]
        counts = np.sum(np.isfinite(window), axis=0)
        means = np.full(n, np.nan)
        ok = counts >= min_valid_days
        if np.any(ok):
            with np.errstate(invalid="ignore"):
                means[ok] = np.nanmean(window[:, ok], axis=0)
        current = np.zeros(n, dtype=bool)
        for region, count in counts_by_region.items():
            in_region = np.nonzero((regions == region) & np.isfinite(means))[0]
            if len(in_region) == 0:
                continue
            # sort by ADV descending, asset index as a deterministic tie-break
            order = in_region[np.lexsort((in_region, -means[in_region]))]
            current[order[: min(count, len(order))]] = True
        mask[start:boundaries[k + 1]] = current
    return PoolMask(
        dates=panel.dates,
        assets=panel.assets,
        mask=mask,
        rebalance_indices=rebal,
    )


# ---------------------------------------------------------------------------
# Fama-French 2x3 building blocks
# ---------------------------------------------------------------------------

# which sort tertile the factor is long
DEFAULT_LONG_TERTILE = {
    "HML": "hi",
    "WML": "hi",
    "UMD": "hi",
    "MOM": "hi",
    "RMW": "hi",
    "CMA": "lo",
    "VOL": "lo",
}

_FF_MISSING_CUTOFF = -99.0  # sentinel codes -99.99 / -999


@dataclass(frozen=True)
class LegPanel:
    """Monthly 2x3 building blocks and the per-factor long/short legs.

    All series share one monthly calendar and are decimal returns. Each
    factor carries its six size-x-sort blocks, the equal-weight mean of
    those blocks (a half-small half-big market), and its two legs: the
    long leg averages the small and big blocks of the long tertile, the
    short leg the two blocks of the opposite tertile.
    """

    months: np.ndarray
    factors: tuple[str, ...]
    blocks: dict[str, dict[str, np.ndarray]]
    long_leg: dict[str, np.ndarray]
    short_leg: dict[str, np.ndarray]
    block_market: dict[str, np.ndarray]
    market_vw: np.ndarray
    smb: np.ndarray
    rf: np.ndarray


def read_ff_table(path) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Parse the first monthly block of a Kenneth-French-layout CSV.

    The files carry a free-text preamble, then a header row, then rows whose
    first cell is a YYYYMM integer. Reading stops at the first line that no
    longer matches (annual blocks, second tables, blank lines). Values stay
    in percent; sentinels are not masked here.
    """
    with open(path, "r", encoding="latin-1", newline="") as fh:
        lines = fh.read().splitlines()
    start = None
    for i, line in enumerate(lines):
        first = line.split(",")[0].strip()
        if len(first) == 6 and first.isdigit():
            start = i
            break
    if start is None or start == 0:
        raise PanelError(f"{path}: no monthly data block found")
    header = None
    for j in range(start - 1, -1, -1):
        cells = [c.strip() for c in lines[j].split(",")]
        if len(cells) >= 2 and any(cells[1:]):
            header = cells
            break
    if header is None:
        raise PanelError(f"{path}: no header row above the data block")
    names = [c for c in header[1:] if c]
    months, rows = [], []
    for lineno in range(start, len(lines)):
        cells = [c.strip() for c in lines[lineno].split(",")]
        first = cells[0]
        if len(first) != 6 or not first.isdigit():
            break
        if len(cells) < 1 + len(names):
            raise PanelError(f"{path}: line {lineno + 1}: expected {len(names)} values")
        try:
            row = [float(c) for c in cells[1 : 1 + len(names)]]
        except ValueError:
            raise PanelError(f"{path}: line {lineno + 1}: bad numeric cell") from None
        months.append(int(first))
        rows.append(row)
    months_arr = np.array(months, dtype=np.int64)
    if len(np.unique(months_arr)) != len(months_arr):
        raise PanelError(f"{path}: duplicate months in data block")
    return months_arr, names, np.array(rows, dtype=float)


def _yyyymm_to_month(months: np.ndarray) -> np.ndarray:
    return np.array(
        [f"{m // 100:04d}-{m % 100:02d}" for m in months.tolist()],
        dtype="datetime64[M]",
    )


def _classify_block(name: str) -> tuple[str | None, str]:
    s = name.lower()
    if "small" in s or s.startswith("me1"):
        size = "small"
    elif "big" in s or s.startswith("me2"):
        size = "big"
    else:
        size = None
    if "hi" in s:
        tertile = "hi"
    elif "lo" in s:
        tertile = "lo"
    else:
        tertile = "mid"
    return size, tertile


def _mask_percent(values: np.ndarray) -> np.ndarray:
    out = values / 100.0
    out[values <= _FF_MISSING_CUTOFF] = np.nan
    return out


def load_leg_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pre-built monthly legs: CSV with header date,long,short.

    Dates are YYYYMM or YYYY-MM; returns are decimal fractions. Used for
    factor series distributed as ready-made legs rather than 2x3 blocks.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader)]
        if header[:3] != ["date", "long", "short"]:
            raise PanelError(f"{path}: header must be date,long,short")
        months, longs, shorts = [], [], []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or not raw[0].strip():
                continue
            tok = raw[0].strip().replace("-", "")
            if len(tok) != 6 or not tok.isdigit():
                raise PanelError(f"{path}: line {lineno}: bad month {raw[0]!r}")
            try:
                months.append(int(tok))
                longs.append(float(raw[1]))
                shorts.append(float(raw[2]))
            except (ValueError, IndexError):
                raise PanelError(f"{path}: line {lineno}: bad row") from None
    return np.array(months, dtype=np.int64), np.array(longs), np.array(shorts)


def load_famafrench(block_paths: Mapping[str, str],
                    factors_path,
                    long_tertile: Mapping[str, str] | None = None,
                    leg_paths: Mapping[str, str] | None = None) -> LegPanel:
    """Assemble a LegPanel from Kenneth-French-layout files.

    block_paths   factor name -> 2x3 portfolio CSV (six size-x-sort blocks)
    factors_path  the research-factors CSV providing Mkt-RF, SMB and RF
    long_tertile  overrides for which tertile a factor is long
    leg_paths     extra factors shipped as pre-built legs (date,long,short)

    Percent returns become decimal fractions, sentinel codes become missing,
    and everything is aligned on the intersection of the monthly calendars.
    """
    tertile_map = dict(DEFAULT_LONG_TERTILE)
    if long_tertile:
        tertile_map.update({k: v.lower() for k, v in long_tertile.items()})

    fac_months, fac_names, fac_values = read_ff_table(factors_path)
    lowered = [n.lower() for n in fac_names]
    needed = {"mkt-rf": None, "smb": None, "rf": None}
    for key in needed:
        if key not in lowered:
            raise PanelError(f"{factors_path}: missing column {key!r}")
        needed[key] = _mask_percent(fac_values[:, lowered.index(key)].copy())

    per_factor: dict[str, dict[str, np.ndarray]] = {}
    factor_months: dict[str, np.ndarray] = {}
    for factor, path in block_paths.items():
        direction = tertile_map.get(factor.upper())
        if direction not in ("hi", "lo"):
            raise PanelError(
                f"factor {factor!r}: unknown long tertile; pass long_tertile={{...}}"
            )
        months, names, values = read_ff_table(path)
        blocks: dict[str, np.ndarray] = {}
        corners: dict[tuple[str, str], np.ndarray] = {}
        for k, name in enumerate(names):
            series = _mask_percent(values[:, k].copy())
            blocks[name] = series
            size, tertile = _classify_block(name)
            if size is not None and tertile in ("hi", "lo"):
                corners[(size, tertile)] = series
        missing = [
            f"{size} {tert}"
            for size in ("small", "big")
            for tert in ("hi", "lo")
            if (size, tert) not in corners
        ]
        if missing:
            raise PanelError(
                f"factor {factor!r}: missing required 2x3 blocks: {', '.join(missing)}"
            )
        short_dir = "lo" if direction == "hi" else "hi"
        per_factor[factor] = {
            "__blocks__": blocks,
            "long": 0.5 * (corners[("small", direction)] + corners[("big", direction)]),
            "short": 0.5 * (corners[("small", short_dir)] + corners[("big", short_dir)]),
            "market": np.nanmean(np.column_stack(list(blocks.values())), axis=1),
        }
        factor_months[factor] = months

    extra: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    if leg_paths:
        for factor, path in leg_paths.items():
            extra[factor] = load_leg_csv(path)

    common = set(fac_months.tolist())
    for months in factor_months.values():
        common &= set(months.tolist())
    for months, _, _ in extra.values():
        common &= set(months.tolist())
    if not common:
        raise PanelError("calendar mismatch: no overlapping months across input files")
    common_arr = np.array(sorted(common), dtype=np.int64)

    def align(months: np.ndarray, series: np.ndarray) -> np.ndarray:
        pos = {m: i for i, m in enumerate(months.tolist())}
        return series[[pos[m] for m in common_arr.tolist()]]

    factors = tuple(list(block_paths) + list(extra))
    blocks_out: dict[str, dict[str, np.ndarray]] = {}
    long_out: dict[str, np.ndarray] = {}
    short_out: dict[str, np.ndarray] = {}
    market_out: dict[str, np.ndarray] = {}
    for factor in block_paths:
        months = factor_months[factor]
        blocks_out[factor] = {
            name: align(months, series)
            for name, series in per_factor[factor]["__blocks__"].items()
        }
        long_out[factor] = align(months, per_factor[factor]["long"])
        short_out[factor] = align(months, per_factor[factor]["short"])
        market_out[factor] = align(months, per_factor[factor]["market"])
    if extra:
        fallback = (
            np.nanmean(np.column_stack(list(market_out.values())), axis=1)
            if market_out
            else align(fac_months, needed["mkt-rf"] + needed["rf"])
        )
        for factor, (months, longs, shorts) in extra.items():
            blocks_out[factor] = {}
            long_out[factor] = align(months, longs)
            short_out[factor] = align(months, shorts)
            market_out[factor] = fallback

    return LegPanel(
        months=_yyyymm_to_month(common_arr),
        factors=factors,
        blocks=blocks_out,
        long_leg=long_out,
        short_leg=short_out,
        block_market=market_out,
        market_vw=align(fac_months, needed["mkt-rf"] + needed["rf"]),
        smb=align(fac_months, needed["smb"]),
        rf=align(fac_months, needed["rf"]),
    )

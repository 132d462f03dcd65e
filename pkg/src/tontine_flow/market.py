"""Market scenario generation.

Paths of yearly gross real returns are produced either by simulating
correlated double-exponential jump-diffusions for a stock and a bond index,
or by a stationary block bootstrap of a monthly historical return panel.
"""
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ParseError, SimulationError, ValidationError
from .helpers import MARKET_STREAM, digest_arrays, path_chunks, read_source, write_json
from .mortality import DeathProbPaths
from .risk import empirical_var_cvar

log = logging.getLogger(__name__)

MONTHS_PER_YEAR = 12


@dataclass(frozen=True)
class KouParams:
    """Annualised jump-diffusion parameters.

    Log jump sizes are double-exponential: upward with probability ``zeta``
    and mean ``1 / eta1``, downward with mean ``1 / eta2``.
    """

    mu: float
    sigma: float
    lambda_: float
    zeta: float
    eta1: float
    eta2: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        if self.lambda_ < 0:
            raise ValidationError("lambda must be non-negative")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValidationError("zeta must lie in [0, 1]")
        if self.eta1 <= 1.0:
            raise ValidationError("eta1 must exceed 1 for a finite mean jump")
        if self.eta2 <= 0.0:
            raise ValidationError("eta2 must be positive")

    @property
    def kappa(self) -> float:
        """Mean relative jump size ``E[e^Y] - 1``."""
        return (
            self.zeta * self.eta1 / (self.eta1 - 1.0)
            + (1.0 - self.zeta) * self.eta2 / (self.eta2 + 1.0)
            - 1.0
        )

    @property
    def mean_log_jump(self) -> float:
        return self.zeta / self.eta1 - (1.0 - self.zeta) / self.eta2

    @property
    def log_drift(self) -> float:
        """Expected annual log return."""
        return (
            self.mu
            - self.lambda_ * self.kappa
            - 0.5 * self.sigma**2
            + self.lambda_ * self.mean_log_jump
        )


#: Calibrated real stock and bond index parameters.
SYNTHETIC_STOCK = KouParams(0.08912, 0.1460, 0.3263, 0.2258, 4.3625, 5.5335)
SYNTHETIC_BOND = KouParams(0.00460, 0.0130, 0.5053, 0.3958, 65.801, 57.793)
SYNTHETIC_RHO = 0.08420


@dataclass(frozen=True)
class KouMarket:
    """Stock and bond jump-diffusions with correlated Brownian parts."""

    stock: KouParams = SYNTHETIC_STOCK
    bond: KouParams = SYNTHETIC_BOND
    rho: float = SYNTHETIC_RHO
    steps_per_year: int = MONTHS_PER_YEAR

    asset_names = ("stock", "bond")

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValidationError("rho must lie in [-1, 1]")
        if self.steps_per_year < 1:
            raise ValidationError("steps_per_year must be at least 1")

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class AssetPanel:
    """Monthly simple real returns and CPI relative changes."""

    dates: pd.PeriodIndex
    returns: np.ndarray
    cpi_change: np.ndarray
    asset_names: Tuple[str, ...]

    def __post_init__(self):
        n_months = len(self.dates)
        if self.returns.shape != (n_months, len(self.asset_names)):
            raise ValidationError(
                f"Returns shape {self.returns.shape} does not match "
                f"{n_months} months x {len(self.asset_names)} assets"
            )
        if self.cpi_change.shape != (n_months,):
            raise ValidationError("CPI column length does not match the returns")
        if (1.0 + self.returns <= 0).any():
            raise ValidationError("Gross returns must be positive")
        if (1.0 + self.cpi_change <= 0).any():
            raise ValidationError("CPI factors must be positive")

    def __len__(self):
        return len(self.dates)

    def fingerprint(self) -> str:
        return digest_arrays(self.returns, self.cpi_change)


@dataclass(frozen=True)
class BootstrapMarket:
    panel: AssetPanel
    expected_block_len: float = 24.0

    @property
    def asset_names(self) -> Tuple[str, ...]:
        return self.panel.asset_names

    def fingerprint(self) -> str:
        return hashlib.sha256(
            f"{self.panel.fingerprint()}:{self.expected_block_len!r}".encode()
        ).hexdigest()


MarketModel = Union[KouMarket, BootstrapMarket]


@dataclass(frozen=True, eq=False)
class PathSet:
    """Simulated scenarios shared by training, evaluation and pricing.

    :param gross: Gross real returns, shape ``(n_paths, M, n_assets)``.
    :param cpi_index: CPI relative to ``t0``, shape ``(n_paths, M + 1)``.
    :param deltas: Per-path death probabilities; ``None`` means no mortality
        credits (all zero).
    """

    gross: np.ndarray
    cpi_index: np.ndarray
    deltas: Optional[DeathProbPaths] = None
    asset_names: Tuple[str, ...] = ()
    seed: Optional[int] = None
    source: str = ""

    def __post_init__(self):
        if self.gross.ndim != 3:
            raise ValidationError("gross must be a (paths, periods, assets) array")
        n_paths, n_periods, n_assets = self.gross.shape
        if self.cpi_index.shape != (n_paths, n_periods + 1):
            raise ValidationError(
                f"cpi_index shape {self.cpi_index.shape} does not match "
                f"{(n_paths, n_periods + 1)}"
            )
        if not (self.gross > 0).all():
            raise ValidationError("Gross returns must be positive")
        if not (self.cpi_index > 0).all() or not (self.cpi_index[:, 0] == 1.0).all():
            raise ValidationError("cpi_index must be positive and start at 1")
        if self.deltas is not None and self.deltas.delta.shape != (n_paths, n_periods):
            raise ValidationError(
                f"Death probabilities {self.deltas.delta.shape} do not match "
                f"{(n_paths, n_periods)}"
            )
        if self.asset_names and len(self.asset_names) != n_assets:
            raise ValidationError("asset_names does not match the number of assets")

    @property
    def n_paths(self) -> int:
        return self.gross.shape[0]

    @property
    def n_periods(self) -> int:
        return self.gross.shape[1]

    @property
    def n_assets(self) -> int:
        return self.gross.shape[2]

    @property
    def delta(self) -> np.ndarray:
        if self.deltas is None:
            return np.zeros((self.n_paths, self.n_periods))
        return self.deltas.delta

    def with_deltas(self, deltas: DeathProbPaths) -> "PathSet":
        return replace(self, deltas=deltas)

    def take(self, rows) -> "PathSet":
        """Subset of paths (used for minibatches)."""
        return replace(
            self,
            gross=self.gross[rows],
            cpi_index=self.cpi_index[rows],
            deltas=self.deltas.take(rows) if self.deltas is not None else None,
        )

    def fingerprint(self) -> str:
        return digest_arrays(self.gross, self.cpi_index, self.delta)


# Synthetic market ############################################################


def _jump_sums(
    rng: np.random.Generator, params: KouParams, dt: float, shape: Tuple[int, ...]
) -> np.ndarray:
    """Sum of log jump sizes over each substep."""
    counts = rng.poisson(params.lambda_ * dt, size=shape)
    total = int(counts.sum())
    up = rng.random(total) < params.zeta
    up_sizes = rng.exponential(1.0 / params.eta1, size=total)
    down_sizes = rng.exponential(1.0 / params.eta2, size=total)
    sizes = np.where(up, up_sizes, -down_sizes)

    owners = np.repeat(np.arange(counts.size), counts.ravel())
    return np.bincount(owners, weights=sizes, minlength=counts.size).reshape(shape)


def simulate_kou(
    model: KouMarket,
    M: int,
    n_paths: int,
    seed: int,
    *,
    steps_per_year: int = None,
) -> PathSet:
    """Simulate yearly gross returns of the stock and bond indices.

    Each substep is exact in distribution; the log return over a substep of
    length ``dt`` is ``(mu - lambda kappa - sigma^2 / 2) dt + sigma dW`` plus
    the jumps arriving in it. Only the Brownian parts are correlated. CPI is
    held at 1 as the parameters are already real.
    """
    steps = steps_per_year or model.steps_per_year
    if steps < 1:
        raise ValidationError("steps_per_year must be at least 1")
    dt = 1.0 / steps
    assets = (model.stock, model.bond)
    mix = np.sqrt(1.0 - model.rho**2)

    gross = np.empty((n_paths, M, len(assets)))
    for rows, rng in path_chunks(seed, n_paths, MARKET_STREAM):
        shape = (rows.stop - rows.start, M, steps)
        z_stock = rng.standard_normal(shape)
        z_bond = model.rho * z_stock + mix * rng.standard_normal(shape)

        for idx, (params, shocks) in enumerate(zip(assets, (z_stock, z_bond))):
            drift = (params.mu - params.lambda_ * params.kappa - 0.5 * params.sigma**2) * dt
            log_returns = (
                drift + params.sigma * np.sqrt(dt) * shocks + _jump_sums(rng, params, dt, shape)
            )
            gross[rows, :, idx] = np.exp(log_returns.sum(axis=2))

    bad = ~np.isfinite(gross) | (gross <= 0)
    if bad.any():
        path, period, _ = np.argwhere(bad)[0]
        raise SimulationError("Non-finite gross return", path=int(path), period=int(period))

    log.info("Simulated %d synthetic market paths over %d years; CPI held at 1", n_paths, M)
    return PathSet(
        gross=gross,
        cpi_index=np.ones((n_paths, M + 1)),
        asset_names=KouMarket.asset_names,
        seed=seed,
        source=model.fingerprint(),
    )


# Historical panel ############################################################


def load_panel(source) -> AssetPanel:
    """Load a ``date,<asset>...,cpi`` panel of monthly real returns."""
    text, name = read_source(source)
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, skipinitialspace=True)
    except pd.errors.ParserError as ex:
        raise ParseError(f"Malformed panel: {ex}", source=name) from ex

    frame.columns = [str(col).strip() for col in frame.columns]
    lowered = [col.lower() for col in frame.columns]
    if len(lowered) < 3 or lowered[0] != "date" or lowered[-1] != "cpi":
        raise ParseError("Header must be date,<asset>...,cpi", source=name, line=1)

    try:
        dates = pd.DatetimeIndex(pd.to_datetime(frame.iloc[:, 0].str.strip())).to_period("M")
    except (ValueError, TypeError) as ex:
        raise ParseError(f"Invalid date: {ex}", source=name) from ex

    numbers = frame.iloc[:, 1:].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = numbers.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(
            f"Invalid value in column {numbers.columns[col]!r}", source=name, line=int(row) + 2
        )

    if dates.duplicated().any():
        row = int(np.argmax(dates.duplicated()))
        raise ValidationError(f"{name}:{row + 2}: duplicate month {dates[row]}")
    steps = np.diff(dates.asi8)
    if (steps != 1).any():
        row = int(np.argmax(steps != 1)) + 1
        raise ValidationError(f"{name}:{row + 2}: gap or disorder before month {dates[row]}")

    values = numbers.to_numpy(dtype=float)
    returns, cpi = values[:, :-1], values[:, -1]
    if (1.0 + returns <= 0).any():
        row, col = np.argwhere(1.0 + returns <= 0)[0]
        raise ValidationError(
            f"{name}:{row + 2}: gross return of {frame.columns[col + 1]} is not positive"
        )

    panel = AssetPanel(dates, returns, cpi, tuple(frame.columns[1:-1]))
    log.info("Loaded panel %s: %d months, assets %s", name, len(panel), ", ".join(panel.asset_names))
    return panel


@dataclass(frozen=True)
class PanelSummary:
    """Per-asset statistics of monthly returns and their correlations."""

    statistics: pd.DataFrame
    correlation: pd.DataFrame
    n_months: int


def panel_summary(panel: AssetPanel, alpha: float = 0.05) -> PanelSummary:
    """Annualised arithmetic and geometric means, annualised volatility and
    monthly tail risk of each series (CPI included)."""
    columns = {name: panel.returns[:, idx] for idx, name in enumerate(panel.asset_names)}
    columns["cpi"] = panel.cpi_change
    n_months = len(panel)

    rows = {}
    for name, series in columns.items():
        var, cvar = empirical_var_cvar(series, alpha)
        rows[name] = {
            "mean": MONTHS_PER_YEAR * series.mean(),
            "geometric_mean": np.exp(MONTHS_PER_YEAR * np.log1p(series).mean()) - 1.0,
            "volatility": np.sqrt(MONTHS_PER_YEAR) * series.std(ddof=1) if n_months > 1 else 0.0,
            "var": var,
            "cvar": cvar,
        }
    statistics = pd.DataFrame.from_dict(rows, orient="index")
    correlation = pd.DataFrame(panel.returns, columns=list(panel.asset_names)).corr().fillna(0.0)
    return PanelSummary(statistics, correlation, n_months)


def bootstrap_indices(
    n_rows: int, expected_block_len: float, n_months: int, rng: np.random.Generator, n_paths: int
) -> np.ndarray:
    """Row indices of a stationary block bootstrap, shape ``(n_paths, n_months)``.

    A new block starts at a uniformly drawn row with probability
    ``1 / expected_block_len`` each month; otherwise the previous row is
    followed, wrapping around at the end of the panel.
    """
    restart = rng.random((n_paths, n_months)) < 1.0 / expected_block_len
    starts = rng.integers(0, n_rows, size=(n_paths, n_months))

    indices = np.empty((n_paths, n_months), dtype=np.int64)
    indices[:, 0] = starts[:, 0]
    for month in range(1, n_months):
        indices[:, month] = np.where(
            restart[:, month], starts[:, month], (indices[:, month - 1] + 1) % n_rows
        )
    return indices


def bootstrap_paths(
    market: BootstrapMarket,
    M: int,
    n_paths: int,
    seed: int,
    *,
    return_indices: bool = False,
) -> Union[PathSet, Tuple[PathSet, np.ndarray]]:
    """Resample a historical panel into yearly gross returns.

    All assets and CPI share the drawn row index; twelve monthly draws are
    compounded into each model year.

    :param return_indices: Also return the drawn monthly row indices.
    """
    panel = market.panel
    if market.expected_block_len < 1:
        raise ValidationError("expected_block_len must be at least one month")
    if len(panel) < 1:
        raise ValidationError("Panel is empty")

    n_months = M * MONTHS_PER_YEAR
    monthly_gross = 1.0 + panel.returns
    monthly_cpi = 1.0 + panel.cpi_change

    gross = np.empty((n_paths, M, len(panel.asset_names)))
    cpi_index = np.ones((n_paths, M + 1))
    all_indices = np.empty((n_paths, n_months), dtype=np.int64) if return_indices else None

    for rows, rng in path_chunks(seed, n_paths, MARKET_STREAM):
        n = rows.stop - rows.start
        indices = bootstrap_indices(len(panel), market.expected_block_len, n_months, rng, n)
        yearly = monthly_gross[indices].reshape(n, M, MONTHS_PER_YEAR, -1)
        gross[rows] = yearly.prod(axis=2)
        cpi_yearly = monthly_cpi[indices].reshape(n, M, MONTHS_PER_YEAR).prod(axis=2)
        cpi_index[rows, 1:] = np.cumprod(cpi_yearly, axis=1)
        if return_indices:
            all_indices[rows] = indices

    paths = PathSet(
        gross=gross,
        cpi_index=cpi_index,
        asset_names=panel.asset_names,
        seed=seed,
        source=market.fingerprint(),
    )
    return (paths, all_indices) if return_indices else paths


def simulate_market(market: MarketModel, M: int, n_paths: int, seed: int) -> PathSet:
    if isinstance(market, KouMarket):
        return simulate_kou(market, M, n_paths, seed)
    if isinstance(market, BootstrapMarket):
        return bootstrap_paths(market, M, n_paths, seed)
    raise ValidationError(f"Unsupported market model {type(market).__name__}")


# Reporting ###################################################################


@dataclass(frozen=True)
class PathStats:
    assets: pd.DataFrame
    correlation: np.ndarray
    correlation_undefined: bool
    cpi_drift: float


def path_stats(paths: PathSet) -> PathStats:
    """Annualised statistics of the yearly returns in a path set."""
    if paths.n_paths == 0 or paths.n_periods == 0:
        raise ValidationError("path_stats requires a non-empty PathSet")

    names = list(paths.asset_names) or [f"asset_{idx}" for idx in range(paths.n_assets)]
    yearly = paths.gross.reshape(-1, paths.n_assets)
    log_returns = np.log(yearly)

    assets = pd.DataFrame(
        {
            "mean": yearly.mean(axis=0) - 1.0,
            "volatility": yearly.std(axis=0),
            "log_drift": log_returns.mean(axis=0),
        },
        index=names,
    )

    centred = log_returns - log_returns.mean(axis=0)
    scale = np.sqrt((centred**2).mean(axis=0))
    defined = scale > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        correlation = (centred.T @ centred) / len(centred) / np.outer(scale, scale)
    mask = np.outer(defined, defined)
    correlation = np.where(mask, correlation, 0.0)
    undefined = not mask.all()
    if undefined:
        log.warning("Correlation undefined for constant series; reported as 0")

    cpi_drift = float(np.log(paths.cpi_index[:, -1]).mean() / paths.n_periods)
    return PathStats(assets, correlation, undefined, cpi_drift)


# Persistence #################################################################


def _path_files(directory: Path, name: str):
    return {
        key: directory / f"{name}.{key}.bin" for key in ("gross", "cpi", "delta")
    }, directory / f"{name}.json"


def save_paths(paths: PathSet, directory: Union[str, Path], name: str) -> List[Path]:
    """Write a PathSet as little-endian float64 files plus a JSON sidecar.

    :return: Files written, sidecar last.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files, sidecar = _path_files(directory, name)
    arrays = {"gross": paths.gross, "cpi": paths.cpi_index, "delta": paths.delta}
    for key, array in arrays.items():
        np.ascontiguousarray(array, dtype="<f8").tofile(files[key])

    write_json(
        sidecar,
        {
            "n_paths": paths.n_paths,
            "n_periods": paths.n_periods,
            "n_assets": paths.n_assets,
            "asset_names": list(paths.asset_names),
            "has_deltas": paths.deltas is not None,
            "x0": paths.deltas.x0 if paths.deltas is not None else None,
            "y0": paths.deltas.y0 if paths.deltas is not None else None,
            "seed": paths.seed,
            "source": paths.source,
            "sha256": paths.fingerprint(),
        },
    )
    return [*files.values(), sidecar]


def load_paths(directory: Union[str, Path], name: str) -> PathSet:
    directory = Path(directory)
    files, sidecar = _path_files(directory, name)
    meta = json.loads(sidecar.read_text())
    n, m, a = meta["n_paths"], meta["n_periods"], meta["n_assets"]

    gross = np.fromfile(files["gross"], dtype="<f8").reshape(n, m, a)
    cpi_index = np.fromfile(files["cpi"], dtype="<f8").reshape(n, m + 1)
    delta = np.fromfile(files["delta"], dtype="<f8").reshape(n, m)

    paths = PathSet(
        gross=gross,
        cpi_index=cpi_index,
        deltas=DeathProbPaths(delta, meta["x0"], meta["y0"]) if meta["has_deltas"] else None,
        asset_names=tuple(meta["asset_names"]),
        seed=meta["seed"],
        source=meta["source"],
    )
    if paths.fingerprint() != meta["sha256"]:
        raise ValidationError(f"{sidecar}: content hash does not match the stored paths")
    return paths

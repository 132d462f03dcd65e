"""Mortality models.

Deterministic life tables, Lee-Carter and Cairns-Blake-Dowd stochastic
models, and the per-path sequences of one-year death probabilities that drive
mortality credits.

Death probability sequences are indexed from zero: ``delta[:, j]`` is the
probability that a member aged ``x0 + j`` at the start of year ``y0 + j``
dies during that year.
"""
import io
import logging
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .errors import CalibrationError, ParseError, TableRangeError, ValidationError
from .helpers import MORTALITY_STREAM, path_chunks, read_source

log = logging.getLogger(__name__)

#: Projected probabilities are clamped to ``[Q_EPSILON, 1 - Q_EPSILON]``.
Q_EPSILON = 1e-10

DEFAULT_AGES = (55, 95)
DEFAULT_YEARS = (1987, 2021)

Link = Literal["log", "logit"]
Window = Optional[Tuple[int, int]]
Cell = Tuple[int, int]


# Input parsing ###############################################################


def _read_frame(text: str, name: str) -> Tuple[pd.DataFrame, int]:
    """Read either a comma separated file or an HMD style whitespace table.

    :return: Frame of strings and the file line number of the first data row.
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    # HMD files start with a title and a blank line before a whitespace header
    header_at = next(
        (
            idx
            for idx, line in enumerate(lines)
            if [t.lower() for t in line.split()[:2]] == ["year", "age"]
        ),
        None,
    )
    if header_at is not None:
        options = {"sep": r"\s+"}
    elif "," in next((line for line in lines if line.strip()), ""):
        header_at = 0
        options = {"sep": ",", "skipinitialspace": True}
    else:
        raise ParseError("Expected a CSV header or a `Year Age ...` table", source=name, line=1)

    try:
        frame = pd.read_csv(
            io.StringIO("\n".join(lines[header_at:])),
            dtype=str,
            skip_blank_lines=False,
            **options,
        )
    except pd.errors.ParserError as ex:
        match = re.search(r"line (\d+)", str(ex))
        line = header_at + int(match.group(1)) if match else None
        raise ParseError("Malformed row", source=name, line=line) from ex

    frame.columns = [str(col).strip().lower() for col in frame.columns]
    return frame, header_at + 2


def _numeric_columns(
    frame: pd.DataFrame, columns: Iterable[str], *, name: str, first_line: int
) -> Dict[str, np.ndarray]:
    """Convert string columns to numbers, reporting the first bad row."""
    missing = [col for col in columns if col not in frame.columns]
    if missing:
        raise ParseError(f"Missing column(s): {', '.join(missing)}", source=name, line=1)

    def line_of(row: int) -> int:
        return first_line + int(frame.index[row])

    values = {}
    for col in columns:
        raw = frame[col].fillna("").astype(str).str.strip().str.rstrip("+")
        numbers = pd.to_numeric(raw, errors="coerce")
        bad = numbers.isna().to_numpy()
        if bad.any():
            row = int(np.argmax(bad))
            raise ParseError(
                f"Invalid {col} value {frame[col].iloc[row]!r}",
                source=name,
                line=line_of(row),
            )
        values[col] = numbers.to_numpy(dtype=float)

    for col in ("year", "age"):
        if col in values:
            fractional = values[col] != np.floor(values[col])
            if fractional.any():
                row = int(np.argmax(fractional))
                raise ParseError(f"{col} must be a whole number", source=name, line=line_of(row))
            values[col] = values[col].astype(int)

    values["line"] = first_line + frame.index.to_numpy(dtype=int)
    return values


def _drop_open_age_group(frame: pd.DataFrame) -> pd.DataFrame:
    """Drop the open ``110+`` age group; it is not a one-year probability."""
    if "age" not in frame.columns:
        return frame
    open_group = frame["age"].fillna("").astype(str).str.strip().str.endswith("+")
    return frame[~open_group]


def _in_window(values: np.ndarray, window: Window) -> np.ndarray:
    if window is None:
        return np.ones(values.shape, dtype=bool)
    return (values >= window[0]) & (values <= window[1])


# Life tables #################################################################


@dataclass(frozen=True)
class LifeTable:
    """One-year conditional death probabilities keyed by ``(age, year)``."""

    entries: Mapping[Cell, float]

    def __post_init__(self):
        for cell, q in self.entries.items():
            if not 0.0 <= q < 1.0:
                raise ValidationError(f"Death probability {q} at {cell} outside [0, 1)")

    def __len__(self):
        return len(self.entries)

    def __contains__(self, cell: Cell):
        return cell in self.entries

    def q(self, age: int, year: int) -> float:
        try:
            return self.entries[(age, year)]
        except KeyError:
            raise TableRangeError(age, year) from None

    @property
    def ages(self) -> List[int]:
        return sorted({age for age, _ in self.entries})

    @property
    def years(self) -> List[int]:
        return sorted({year for _, year in self.entries})

    def missing_cells(self) -> List[Cell]:
        """Cells absent from the bounding ``ages x years`` rectangle."""
        return [
            (age, year)
            for age in self.ages
            for year in self.years
            if (age, year) not in self.entries
        ]

    @classmethod
    def constant(cls, q: float, ages: Iterable[int], years: Iterable[int]) -> "LifeTable":
        years = list(years)
        return cls({(age, year): float(q) for age in ages for year in years})


def load_life_table(source, *, rectangular: bool = False) -> LifeTable:
    """Load a life table.

    Accepts a comma separated file with ``year,age,qx`` columns or a Human
    Mortality Database 1x1 period table (``Year Age mx qx ...``). The open
    ``110+`` age group is skipped.

    :param source: Path or file-like object.
    :param rectangular: Require every ``(age, year)`` cell of the bounding
        rectangle to be present.
    """
    text, name = read_source(source)
    frame, first_line = _read_frame(text, name)
    frame = _drop_open_age_group(frame)
    values = _numeric_columns(frame, ("year", "age", "qx"), name=name, first_line=first_line)

    entries = {}
    for year, age, q, line in zip(values["year"], values["age"], values["qx"], values["line"]):
        if not 0.0 <= q < 1.0:
            raise ValidationError(f"{name}:{line}: qx={q} outside [0, 1)")
        cell = (int(age), int(year))
        if cell in entries:
            raise ValidationError(f"{name}:{line}: duplicate entry for {cell}")
        entries[cell] = float(q)

    table = LifeTable(entries)
    if rectangular:
        missing = table.missing_cells()
        if missing:
            listed = ", ".join(map(str, missing[:10]))
            more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
            raise ValidationError(f"{name}: life table missing cells {listed}{more}")

    log.info("Loaded life table %s with %d entries", name, len(table))
    return table


def table_deltas(
    table: LifeTable, x0: int, y0: int, M: int, *, period: bool = False
) -> np.ndarray:
    """Death probabilities along the diagonal ``(x0 + j, y0 + j)``.

    :param period: Read every year from the ``y0`` column instead (a period
        table applied to the whole horizon).
    """
    return np.array(
        [table.q(x0 + j, y0 if period else y0 + j) for j in range(M)], dtype=float
    )


# Calibration data ############################################################


@dataclass(frozen=True, eq=False)
class MortalityHistory:
    """Deaths and central exposures on a rectangular ``ages x years`` grid."""

    ages: np.ndarray
    years: np.ndarray
    deaths: np.ndarray
    exposure: np.ndarray

    def __post_init__(self):
        shape = (len(self.ages), len(self.years))
        if self.deaths.shape != shape or self.exposure.shape != shape:
            raise ValidationError(
                f"Deaths {self.deaths.shape} and exposure {self.exposure.shape} "
                f"must both be {shape}"
            )
        if (self.deaths < 0).any() or (self.exposure < 0).any():
            raise ValidationError("Deaths and exposures must be non-negative")
        if ((self.deaths > 0) & (self.exposure <= 0)).any():
            raise ValidationError("Exposure must be positive where deaths are recorded")

    @property
    def central_rates(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.exposure > 0, self.deaths / self.exposure, 0.0)

    @property
    def initial_q(self) -> np.ndarray:
        """Death probabilities using initial exposure ``E + D / 2``."""
        initial = self.exposure + 0.5 * self.deaths
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(initial > 0, self.deaths / initial, 0.0)

    def cell(self, row: int, col: int) -> Cell:
        return int(self.ages[row]), int(self.years[col])


def load_history(
    source, *, ages: Window = DEFAULT_AGES, years: Window = DEFAULT_YEARS
) -> MortalityHistory:
    """Load ``year,age,deaths,exposure`` records, restricted to an age/year window.

    Pass ``None`` for a window to keep everything.
    """
    text, name = read_source(source)
    frame, first_line = _read_frame(text, name)
    frame = _drop_open_age_group(frame)
    values = _numeric_columns(
        frame, ("year", "age", "deaths", "exposure"), name=name, first_line=first_line
    )

    keep = _in_window(values["age"], ages) & _in_window(values["year"], years)
    records = pd.DataFrame({key: value[keep] for key, value in values.items()})
    if records.empty:
        raise ValidationError(f"{name}: no records inside ages {ages} and years {years}")
    duplicated = records.duplicated(["age", "year"])
    if duplicated.any():
        first = records[duplicated].iloc[0]
        raise ValidationError(
            f"{name}:{int(first.line)}: duplicate record for "
            f"({int(first.age)}, {int(first.year)})"
        )

    deaths = records.pivot(index="age", columns="year", values="deaths")
    exposure = records.pivot(index="age", columns="year", values="exposure")
    gaps = np.argwhere(deaths.isna().to_numpy())
    if len(gaps):
        row, col = gaps[0]
        raise ValidationError(
            f"{name}: history has no record for ({deaths.index[row]}, {deaths.columns[col]})"
        )

    return MortalityHistory(
        ages=deaths.index.to_numpy(dtype=int),
        years=deaths.columns.to_numpy(dtype=int),
        deaths=deaths.to_numpy(dtype=float),
        exposure=exposure.to_numpy(dtype=float),
    )


# Models ######################################################################


@dataclass(frozen=True)
class TableMortality:
    """Deterministic mortality read from a life table."""

    table: LifeTable
    period: bool = False


@dataclass(frozen=True, eq=False)
class LcParams:
    """Lee-Carter parameters: ``eta = alpha_x + beta_x kappa_y`` with kappa a
    random walk with drift."""

    ages: np.ndarray
    years: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    drift: float
    sigma_kappa: float
    link: Link = "log"

    def __post_init__(self):
        if self.sigma_kappa < 0:
            raise ValidationError("sigma_kappa must be non-negative")
        if self.link not in ("log", "logit"):
            raise ValidationError(f"Unknown link {self.link!r}")

    def death_probabilities(self, eta: np.ndarray) -> np.ndarray:
        if self.link == "log":
            # Central rate to one-year probability under a constant force
            return -np.expm1(-np.exp(eta))
        return expit(eta)

    def as_dict(self) -> dict:
        return {
            "kind": "lc",
            "ages": self.ages.tolist(),
            "years": self.years.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "kappa": self.kappa.tolist(),
            "drift": float(self.drift),
            "sigma_kappa": float(self.sigma_kappa),
            "link": self.link,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LcParams":
        return cls(
            ages=np.asarray(data["ages"], dtype=int),
            years=np.asarray(data["years"], dtype=int),
            alpha=np.asarray(data["alpha"], dtype=float),
            beta=np.asarray(data["beta"], dtype=float),
            kappa=np.asarray(data["kappa"], dtype=float),
            drift=float(data["drift"]),
            sigma_kappa=float(data["sigma_kappa"]),
            link=data.get("link", "log"),
        )


@dataclass(frozen=True, eq=False)
class CbdParams:
    """Cairns-Blake-Dowd parameters:
    ``logit q = kappa1_y + kappa2_y (x - xbar)``."""

    years: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    drift: np.ndarray
    cov: np.ndarray
    xbar: float

    def __post_init__(self):
        if len(self.kappa1) != len(self.kappa2):
            raise ValidationError("kappa1 and kappa2 must have equal length")
        if self.cov.shape != (2, 2) or not np.allclose(self.cov, self.cov.T):
            raise ValidationError("cov must be a symmetric 2x2 matrix")

    def as_dict(self) -> dict:
        return {
            "kind": "cbd",
            "years": self.years.tolist(),
            "kappa1": self.kappa1.tolist(),
            "kappa2": self.kappa2.tolist(),
            "drift": self.drift.tolist(),
            "cov": self.cov.tolist(),
            "xbar": float(self.xbar),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CbdParams":
        return cls(
            years=np.asarray(data["years"], dtype=int),
            kappa1=np.asarray(data["kappa1"], dtype=float),
            kappa2=np.asarray(data["kappa2"], dtype=float),
            drift=np.asarray(data["drift"], dtype=float),
            cov=np.asarray(data["cov"], dtype=float),
            xbar=float(data["xbar"]),
        )


MortalityModel = Union[TableMortality, LcParams, CbdParams]


def _random_walk_statistics(kappa: np.ndarray):
    """Drift and standard deviation (or covariance) of first differences."""
    diffs = np.diff(kappa, axis=0)
    if len(diffs) == 0:
        return np.zeros(kappa.shape[1:]), np.zeros(kappa.shape[1:] * 2)
    drift = diffs.mean(axis=0)
    if len(diffs) < 2:
        return drift, np.zeros(kappa.shape[1:] * 2)
    if kappa.ndim == 1:
        return drift, diffs.std(ddof=1)
    return drift, np.atleast_2d(np.cov(diffs, rowvar=False))


def fit_lc(history: MortalityHistory, *, link: Link = "log") -> LcParams:
    """Classical Lee-Carter fit.

    ``alpha`` is the row mean of the link-transformed rates; ``(beta, kappa)``
    is the leading singular pair of the centred matrix scaled so that
    ``sum(beta) == 1`` (which also gives ``sum(kappa) == 0``).
    """
    if link == "log":
        rates = history.central_rates
        label = "central death rate"
    elif link == "logit":
        rates = history.initial_q
        label = "death probability"
    else:
        raise ValidationError(f"Unknown link {link!r}")

    invalid = rates <= 0
    if link == "logit":
        invalid |= rates >= 1
    if invalid.any():
        row, col = np.argwhere(invalid)[0]
        raise CalibrationError(
            f"Zero or degenerate {label} at (age, year)={history.cell(row, col)}; "
            "consider smoothing the history"
        )

    eta = np.log(rates) if link == "log" else logit(rates)
    alpha = eta.mean(axis=1)
    centred = eta - alpha[:, None]

    u, s, vt = np.linalg.svd(centred, full_matrices=False)
    n_ages = len(history.ages)
    if s[0] <= 1e-12 * max(1.0, np.abs(eta).max()):
        beta = np.full(n_ages, 1.0 / n_ages)
        kappa = np.zeros(len(history.years))
    else:
        scale = u[:, 0].sum()
        if abs(scale) < 1e-12:
            raise CalibrationError("Leading age factor sums to zero; cannot normalise")
        beta = u[:, 0] / scale
        kappa = s[0] * vt[0] * scale

    drift, sigma = _random_walk_statistics(kappa)
    log.info("Fitted Lee-Carter (%s link): drift=%.6g sigma=%.6g", link, drift, sigma)
    return LcParams(
        ages=np.asarray(history.ages, dtype=int),
        years=np.asarray(history.years, dtype=int),
        alpha=alpha,
        beta=beta,
        kappa=kappa,
        drift=float(drift),
        sigma_kappa=float(sigma),
        link=link,
    )


def fit_cbd(history: MortalityHistory, xbar: float = None) -> CbdParams:
    """Per-year least squares of ``logit q`` on ``(1, x - xbar)``.

    :param xbar: Reference age; defaults to the mean age of the history.
    """
    q = history.initial_q
    invalid = (q <= 0) | (q >= 1)
    if invalid.any():
        row, col = np.argwhere(invalid)[0]
        raise CalibrationError(
            f"Death probability of 0 or 1 at (age, year)={history.cell(row, col)}"
        )

    ages = np.asarray(history.ages, dtype=float)
    xbar = float(ages.mean()) if xbar is None else float(xbar)
    design = np.column_stack([np.ones_like(ages), ages - xbar])
    if np.linalg.matrix_rank(design) < 2:
        raise CalibrationError("CBD fit needs at least two distinct ages")

    coefficients, *_ = np.linalg.lstsq(design, logit(q), rcond=None)
    kappa = coefficients.T
    drift, cov = _random_walk_statistics(kappa)
    return CbdParams(
        years=np.asarray(history.years, dtype=int),
        kappa1=kappa[:, 0].copy(),
        kappa2=kappa[:, 1].copy(),
        drift=np.asarray(drift, dtype=float),
        cov=np.asarray(cov, dtype=float),
        xbar=xbar,
    )


# Simulation ##################################################################


@dataclass(frozen=True, eq=False)
class DeathProbPaths:
    """Per-path one-year death probabilities, shape ``(n_paths, M)``."""

    delta: np.ndarray
    x0: int
    y0: int

    def __post_init__(self):
        if self.delta.ndim != 2:
            raise ValidationError("delta must be a (paths, periods) matrix")
        if ((self.delta < 0) | (self.delta >= 1)).any():
            raise ValidationError("Death probabilities must lie in [0, 1)")

    @property
    def n_paths(self) -> int:
        return self.delta.shape[0]

    @property
    def n_periods(self) -> int:
        return self.delta.shape[1]

    def take(self, rows) -> "DeathProbPaths":
        return DeathProbPaths(self.delta[rows], self.x0, self.y0)


def _clamp(q: np.ndarray, model: str) -> np.ndarray:
    if not np.isfinite(q).all():
        path, period = np.argwhere(~np.isfinite(q))[0]
        raise ValidationError(
            f"{model} projection produced a non-finite probability at path {path}, period {period}"
        )
    outside = (q < Q_EPSILON) | (q > 1.0 - Q_EPSILON)
    count = int(outside.sum())
    if count:
        log.warning(
            "Clamped %d projected %s death probabilities to [%g, %g]",
            count,
            model,
            Q_EPSILON,
            1.0 - Q_EPSILON,
        )
    return np.clip(q, Q_EPSILON, 1.0 - Q_EPSILON)


def _period_kappa(
    fitted: np.ndarray,
    fitted_years: np.ndarray,
    drift,
    shock_factor,
    years: np.ndarray,
    rng: np.random.Generator,
    n_paths: int,
) -> np.ndarray:
    """Period index for each path and calendar year.

    In-sample years use the fitted values; later years follow the random walk
    from the last fitted value with one innovation per projected year.

    :return: Array ``(n_paths, len(years), *factor_shape)``.
    """
    first, last = int(fitted_years[0]), int(fitted_years[-1])
    factor_shape = fitted.shape[1:]
    horizon = max(0, int(years[-1]) - last)

    shocks = rng.standard_normal((n_paths, horizon, *factor_shape))
    if factor_shape:
        increments = drift + shocks @ shock_factor.T
    else:
        increments = drift + shock_factor * shocks
    projected = fitted[-1] + np.cumsum(increments, axis=1)

    kappa = np.empty((n_paths, len(years), *factor_shape))
    for j, year in enumerate(years):
        if year <= last:
            kappa[:, j] = fitted[int(year) - first]
        else:
            kappa[:, j] = projected[:, int(year) - last - 1]
    return kappa


def _check_years(years: np.ndarray, ages: np.ndarray, fitted_years: np.ndarray):
    if years[0] < fitted_years[0]:
        raise TableRangeError(int(ages[0]), int(years[0]))


def _cbd_shock_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        values, vectors = np.linalg.eigh(cov)
        values = np.where(values < 1e-12, 0.0, values)
        return vectors * np.sqrt(values)


def simulate_deltas(
    model: MortalityModel, x0: int, y0: int, M: int, n_paths: int, seed: int
) -> DeathProbPaths:
    """Per-path death probabilities along the cohort diagonal.

    Life tables give identical rows; LC and CBD project the period index
    forward with seeded Gaussian innovations.
    """
    ages = x0 + np.arange(M)
    years = y0 + np.arange(M)

    if isinstance(model, TableMortality):
        row = table_deltas(model.table, x0, y0, M, period=model.period)
        return DeathProbPaths(np.tile(row, (n_paths, 1)), x0, y0)

    delta = np.empty((n_paths, M))
    if isinstance(model, LcParams):
        index = {int(age): idx for idx, age in enumerate(model.ages)}
        for age, year in zip(ages, years):
            if int(age) not in index:
                raise TableRangeError(int(age), int(year))
        _check_years(years, ages, model.years)
        rows = np.array([index[int(age)] for age in ages])

        for chunk, rng in path_chunks(seed, n_paths, MORTALITY_STREAM):
            n = chunk.stop - chunk.start
            kappa = _period_kappa(
                model.kappa, model.years, model.drift, model.sigma_kappa, years, rng, n
            )
            eta = model.alpha[rows] + model.beta[rows] * kappa
            delta[chunk] = model.death_probabilities(eta)
        name = "Lee-Carter"

    elif isinstance(model, CbdParams):
        _check_years(years, ages, model.years)
        fitted = np.column_stack([model.kappa1, model.kappa2])
        factor = _cbd_shock_factor(model.cov)

        for chunk, rng in path_chunks(seed, n_paths, MORTALITY_STREAM):
            n = chunk.stop - chunk.start
            kappa = _period_kappa(fitted, model.years, model.drift, factor, years, rng, n)
            eta = kappa[..., 0] + kappa[..., 1] * (ages - model.xbar)
            delta[chunk] = expit(eta)
        name = "CBD"

    else:
        raise ValidationError(f"Unsupported mortality model {type(model).__name__}")

    return DeathProbPaths(_clamp(delta, name), x0, y0)


def gain_rates(delta_row) -> np.ndarray:
    """Tontine gain rates ``delta / (1 - delta)``."""
    delta = np.asarray(delta_row, dtype=float)
    if ((delta < 0) | (delta >= 1)).any():
        raise ValidationError("Death probabilities must lie in [0, 1)")
    return delta / (1.0 - delta)

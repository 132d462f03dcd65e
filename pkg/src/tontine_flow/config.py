"""Run configuration.

A run is described by one JSON document; nested objects map onto frozen
dataclasses. A document may name a ``preset`` whose values it overrides::

    {
        "preset": "validation",
        "mortality": {"table": "tables/cpm2014.csv"},
        "frontier": {"gammas": [0.2, 1.5]}
    }

Relative file paths are resolved against the directory of the document.
"""
import copy
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from pyapp.conf import settings

from . import default_settings
from .errors import ConfigurationError, ParseError, TontineFlowError
from .market import SYNTHETIC_BOND, SYNTHETIC_RHO, SYNTHETIC_STOCK, KouParams, MONTHS_PER_YEAR
from .mbg import MbgPricingConfig
from .tontine import ScenarioConfig
from .train import TrainConfig

log = logging.getLogger(__name__)

MarketKind = Literal["kou", "bootstrap"]
MortalityKind = Literal["none", "table", "lc", "cbd"]

#: Aliases for keys that collide with Python keywords.
KEY_ALIASES = {"lambda": "lambda_"}


def setting(name: str):
    """Value of a process wide setting, falling back to the package defaults."""
    return getattr(settings, name, getattr(default_settings, name))


@dataclass(frozen=True)
class MarketConfig:
    kind: MarketKind = "kou"
    stock: KouParams = SYNTHETIC_STOCK
    bond: KouParams = SYNTHETIC_BOND
    rho: float = SYNTHETIC_RHO
    steps_per_year: int = MONTHS_PER_YEAR
    panel: Optional[Path] = None
    expected_block_len: float = 24.0

    @property
    def n_assets(self) -> Optional[int]:
        """Asset count where known without reading data."""
        return 2 if self.kind == "kou" else None


@dataclass(frozen=True)
class MortalityConfig:
    kind: MortalityKind = "table"
    table: Optional[Path] = None
    history: Optional[Path] = None
    period: bool = False
    link: Literal["log", "logit"] = "log"
    xbar: Optional[float] = None
    ages: Optional[Tuple[int, int]] = (55, 95)
    years: Optional[Tuple[int, int]] = (1987, 2021)


@dataclass(frozen=True)
class FrontierConfig:
    gammas: Tuple[float, ...] = (0.2, 0.5, 1.0, 1.5, 3.0)


@dataclass(frozen=True)
class EvaluationConfig:
    n_eval_paths: int = field(default_factory=lambda: setting("DESK_EVAL_PATHS"))
    benchmark_step: float = 0.1
    benchmark_q: Optional[float] = None
    histogram_bins: int = field(default_factory=lambda: setting("HISTOGRAM_BINS"))
    heatmap_times: Optional[Tuple[int, ...]] = None
    sensitivity_lambdas: Tuple[float, ...] = (0.0, 0.5, 1.0)
    sensitivity_alphas: Tuple[float, ...] = (0.01, 0.05)


@dataclass(frozen=True)
class Seeds:
    """Seeds for the training, evaluation and pricing roles."""

    train: int = 0
    eval: int = 1
    price: int = 2

    @classmethod
    def default(cls) -> "Seeds":
        return cls(*setting("DEFAULT_SEEDS"))

    @classmethod
    def from_override(cls, seed: int) -> "Seeds":
        return cls(seed, seed + 1, seed + 2)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    mortality: MortalityConfig = field(default_factory=MortalityConfig)
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(n_train_paths=setting("DESK_TRAIN_PATHS"))
    )
    pricing: MbgPricingConfig = field(
        default_factory=lambda: MbgPricingConfig(n_price_paths=setting("DESK_PRICE_PATHS"))
    )
    frontier: FrontierConfig = field(default_factory=FrontierConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: Path = field(default_factory=lambda: Path(setting("OUTPUT_DIR")))
    seeds: Seeds = field(default_factory=Seeds.default)
    preset: Optional[str] = None

    def __post_init__(self):
        roles = (self.seeds.train, self.seeds.eval, self.seeds.price)
        if len(set(roles)) != len(roles):
            raise ConfigurationError("train, eval and price seeds must be distinct", field="seeds")
        if self.market.n_assets and self.market.n_assets != self.scenario.asset_count:
            raise ConfigurationError(
                f"{self.market.kind} market has {self.market.n_assets} assets",
                field="scenario.asset_count",
            )
        if self.pricing.L0 != self.scenario.L0:
            raise ConfigurationError(
                f"must equal scenario.L0 ({self.scenario.L0:g})", field="pricing.L0"
            )

    def with_seed_override(self, seed: Optional[int]) -> "RunConfig":
        """Replace the role seeds by ``(seed, seed + 1, seed + 2)``."""
        if seed is None:
            return self
        return dataclasses.replace(self, seeds=Seeds.from_override(seed))

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seeds.train)

    def pricing_config(self) -> MbgPricingConfig:
        return dataclasses.replace(self.pricing, seed=self.seeds.price)

    def as_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


# Presets #####################################################################

#: Annual fee with ``1 - varrho = exp(-0.005)``.
VALIDATION_VARRHO = -math.expm1(-0.005)

PRESETS: Dict[str, Dict[str, Any]] = {
    "validation": {
        "scenario": {"varrho": VALIDATION_VARRHO, "asset_count": 2, "bond_index": 1},
        "market": {"kind": "kou"},
        "mortality": {"kind": "table"},
    },
    "diversified": {
        "scenario": {"varrho": 0.0011, "asset_count": 4, "bond_index": 0},
        "market": {"kind": "bootstrap", "expected_block_len": 24.0},
        "mortality": {"kind": "lc", "link": "log"},
    },
}


def merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``overrides`` into a copy of ``base``."""
    merged = copy.deepcopy(dict(base))
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


# Parsing #####################################################################


def _convert(value: Any, type_: Any, path: str, root: Path) -> Any:
    origin = get_origin(type_)
    if origin is Union:
        if value is None:
            return None
        type_ = next(arg for arg in get_args(type_) if arg is not type(None))
        origin = get_origin(type_)

    if dataclasses.is_dataclass(type_):
        if not isinstance(value, Mapping):
            raise ConfigurationError("expected an object", field=path)
        return build(type_, value, path, root)

    if origin is Literal:
        if value not in get_args(type_):
            options = ", ".join(map(repr, get_args(type_)))
            raise ConfigurationError(f"must be one of {options}; got {value!r}", field=path)
        return value

    if type_ is bool:
        if not isinstance(value, bool):
            raise ConfigurationError("expected true or false", field=path)
        return value

    if type_ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigurationError(f"expected an integer; got {value!r}", field=path)
        return int(value)

    if type_ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"expected a number; got {value!r}", field=path)
        return float(value)

    if type_ is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"expected a string; got {value!r}", field=path)
        return value

    if type_ is Path:
        if not isinstance(value, str):
            raise ConfigurationError(f"expected a file path; got {value!r}", field=path)
        return root / Path(value).expanduser()

    if type_ is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"expected a list; got {value!r}", field=path)
        args = get_args(type_)
        if not args:
            return tuple(value)
        item_type = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(item, item_type, f"{path}[{idx}]", root) for idx, item in enumerate(value))
        if len(value) != len(args):
            raise ConfigurationError(f"expected {len(args)} values", field=path)
        return tuple(
            _convert(item, arg, f"{path}[{idx}]", root)
            for idx, (item, arg) in enumerate(zip(value, args))
        )

    return value


def build(cls, data: Mapping[str, Any], path: str = "", root: Path = Path(".")):
    """Construct dataclass ``cls`` from a mapping, converting nested values.

    :raises ConfigurationError: Unknown keys and invalid values, naming the
        dotted field path.
    """
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in data.items():
        name = KEY_ALIASES.get(key, key)
        field_path = f"{path}.{key}" if path else key
        if name not in names:
            raise ConfigurationError("unknown key", field=field_path)
        kwargs[name] = _convert(value, hints[name], field_path, root)

    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TontineFlowError, ValueError, TypeError) as ex:
        raise ConfigurationError(str(ex), field=path or cls.__name__) from ex


def settings_document() -> Dict[str, Any]:
    """Path counts and seeds from settings, beneath any preset and the document."""
    train, eval_, price = setting("DEFAULT_SEEDS")
    return {
        "train": {"n_train_paths": setting("DESK_TRAIN_PATHS")},
        "pricing": {"n_price_paths": setting("DESK_PRICE_PATHS")},
        "seeds": {"train": train, "eval": eval_, "price": price},
    }


def parse_config(data: Mapping[str, Any], *, root: Path = Path(".")) -> RunConfig:
    """Build a :class:`RunConfig` from a document, applying any named preset."""
    if not isinstance(data, Mapping):
        raise ConfigurationError("Configuration must be a JSON object")
    preset = data.get("preset")
    if preset is not None:
        try:
            data = merge(PRESETS[preset], data)
        except (KeyError, TypeError):
            raise ConfigurationError(
                f"unknown preset {preset!r}; try one of {', '.join(PRESETS)}", field="preset"
            ) from None
    if "scenario" in data and isinstance(data["scenario"], Mapping) and "M" in data["scenario"]:
        # Annual decision times
        data = merge({"scenario": {"T": data["scenario"]["M"]}}, data)
    if "scenario" in data and isinstance(data["scenario"], Mapping) and "L0" in data["scenario"]:
        data = merge({"pricing": {"L0": data["scenario"]["L0"]}}, data)
    return build(RunConfig, merge(settings_document(), data), root=root)


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and parse a JSON run configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"Configuration file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as ex:
        raise ParseError(ex.msg, source=str(path), line=ex.lineno) from ex
    config = parse_config(data, root=path.parent)
    log.debug("Loaded configuration %s", path)
    return config


def check_files(config: RunConfig):
    """Raise a :class:`ConfigurationError` naming any missing input file."""
    required = []
    if config.market.kind == "bootstrap":
        required.append(("market.panel", config.market.panel))
    if config.mortality.kind == "table":
        required.append(("mortality.table", config.mortality.table))
    elif config.mortality.kind in ("lc", "cbd"):
        required.append(("mortality.history", config.mortality.history))

    for field_path, path in required:
        if path is None:
            raise ConfigurationError(
                f"required by {field_path.split('.')[0]} kind", field=field_path
            )
        if not Path(path).is_file():
            raise ConfigurationError(f"file not found: {path}", field=field_path)


def validate_scenario(config: RunConfig) -> Dict[str, Any]:
    """Resolved scenario parameters plus identity checks for the report."""
    scenario = config.scenario
    report = {
        "preset": config.preset,
        "scenario": dataclasses.asdict(scenario),
        "market": config.market.kind,
        "mortality": config.mortality.kind,
        "seeds": dataclasses.asdict(config.seeds),
        "fee_identity": {
            "varrho": scenario.varrho,
            "annual_charge": -math.log1p(-scenario.varrho),
        },
    }
    if config.preset == "validation":
        report["fee_identity"]["matches_validation"] = math.isclose(
            scenario.varrho, VALIDATION_VARRHO, rel_tol=1e-12
        )
    check_files(config)
    return report

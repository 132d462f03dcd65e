"""Run pipeline.

Stages (``simulate``, ``train``, ``frontier``, ``eval``, ``price``) read and
write artifacts under the output directory so any stage can be re-run on
its own once its inputs exist on disk. A manifest listing every artifact
with its content hash is written however the run ends.
"""
import dataclasses
import json
import logging
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence

import pandas as pd

from .config import RunConfig, check_files
from .errors import (
    ConfigurationError,
    PricingError,
    StageFailedError,
    TontineFlowError,
    ValidationError,
)
from .evaluation import NeuralController, benchmark_search, evaluate, export_heatmap
from .helpers import human_join_strings, write_json
from .market import (
    BootstrapMarket,
    KouMarket,
    MarketModel,
    PathSet,
    load_panel,
    load_paths,
    panel_summary,
    path_stats,
    save_paths,
    simulate_market,
)
from .mbg import payout_histogram, price, sensitivity_grid
from .mortality import (
    MortalityModel,
    TableMortality,
    fit_cbd,
    fit_lc,
    load_history,
    load_life_table,
    simulate_deltas,
)
from .pipeline import (
    CaptureErrors,
    ForEach,
    LogMessage,
    Navigable,
    Pipeline,
    PipelineContext,
    SetVar,
    Switch,
    stage,
)
from .policy import Policy, PolicyParams
from .train import FrontierPoint, train, train_point

log = logging.getLogger(__name__)

STAGES = ("simulate", "train", "frontier", "eval", "price")
ROLES = ("train", "eval", "price")
MANIFEST_NAME = "manifest.json"


def resolve_stages(names: Optional[Iterable[str]]) -> FrozenSet[str]:
    """Requested stages; all of them when ``names`` is empty."""
    names = [name for value in (names or ()) for name in value.split(",") if name]
    unknown = sorted(set(names) - set(STAGES))
    if unknown:
        raise ConfigurationError(
            f"unknown stage(s) {human_join_strings(unknown)}; expected {', '.join(STAGES)}",
            field="stage",
        )
    return frozenset(names or STAGES)


# Artifact helpers ############################################################


def _write_csv(context: PipelineContext, frame: pd.DataFrame, path: Path, *, index: bool = True):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format="%.12g", lineterminator="\n")
    context.add_artifact(path)


def _write_json(context: PipelineContext, path: Path, data):
    context.add_artifact(write_json(path, data))


def _policy_document(policy: Policy, params: PolicyParams, **extra) -> dict:
    return {
        "policy": {
            "hidden_layers": list(policy.q_net.hidden_layers),
            "hidden_activation": policy.q_net.hidden_activation,
            "n_assets": policy.n_assets,
            "W0": policy.W0,
            "T": policy.T,
        },
        "params": params.as_dict(),
        **extra,
    }


def _read_policy(path: Path, run_config: RunConfig):
    data = json.loads(path.read_text())
    spec = data["policy"]
    scenario = run_config.scenario
    if spec["n_assets"] != scenario.asset_count or spec["W0"] != scenario.W0 or spec["T"] != scenario.T:
        raise ValidationError(f"{path}: policy was trained for a different scenario")
    policy = Policy.for_scenario(scenario, spec["hidden_layers"], spec["hidden_activation"])
    return policy, PolicyParams.from_dict(data["params"])


class MarkComplete(Navigable):
    """Record that a stage finished."""

    __slots__ = ("stage",)

    def __init__(self, stage_name: str):
        self.stage = stage_name

    def __call__(self, context: PipelineContext):
        context.state.completed.append(self.stage)
        context.info("✅ %s complete", self.stage)

    @property
    def name(self):
        return f"Mark {self.stage} complete"


# Setup #######################################################################


@stage
def prepare_output(run_config: RunConfig, out_dir: Path, context: PipelineContext):
    """Create the output directory and echo the resolved config."""
    check_files(run_config)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(context, out_dir / "config.json", run_config.as_dict())


# Market and mortality models #################################################


@stage(output="market_model")
def kou_market(run_config: RunConfig) -> KouMarket:
    market = run_config.market
    log.warning("Synthetic market holds CPI at 1; nominal and real amounts coincide")
    return KouMarket(market.stock, market.bond, market.rho, market.steps_per_year)


@stage(output="market_model")
def bootstrap_market(run_config: RunConfig, out_dir: Path, context: PipelineContext) -> BootstrapMarket:
    panel = load_panel(run_config.market.panel)
    if len(panel.asset_names) != run_config.scenario.asset_count:
        raise ConfigurationError(
            f"panel has {len(panel.asset_names)} assets", field="scenario.asset_count"
        )
    summary = panel_summary(panel)
    _write_csv(context, summary.statistics, out_dir / "market" / "panel_summary.csv")
    _write_csv(context, summary.correlation, out_dir / "market" / "panel_correlation.csv")
    return BootstrapMarket(panel, run_config.market.expected_block_len)


@stage(output="mortality_model")
def no_mortality() -> None:
    return None


@stage(output="mortality_model")
def table_mortality(run_config: RunConfig) -> TableMortality:
    mortality = run_config.mortality
    return TableMortality(load_life_table(mortality.table), period=mortality.period)


@stage(output="mortality_model")
def lc_mortality(run_config: RunConfig, out_dir: Path, context: PipelineContext):
    mortality = run_config.mortality
    history = load_history(mortality.history, ages=mortality.ages, years=mortality.years)
    params = fit_lc(history, link=mortality.link)
    _write_json(context, out_dir / "mortality" / "lc_params.json", params.as_dict())
    return params


@stage(output="mortality_model")
def cbd_mortality(run_config: RunConfig, out_dir: Path, context: PipelineContext):
    mortality = run_config.mortality
    history = load_history(mortality.history, ages=mortality.ages, years=mortality.years)
    params = fit_cbd(history, xbar=mortality.xbar)
    _write_json(context, out_dir / "mortality" / "cbd_params.json", params.as_dict())
    return params


market_models = (
    Switch(lambda ctx: ctx.state.run_config.market.kind)
    .case("kou", kou_market)
    .case("bootstrap", bootstrap_market)
)

mortality_models = (
    Switch(lambda ctx: ctx.state.run_config.mortality.kind)
    .case("none", no_mortality)
    .case("table", table_mortality)
    .case("lc", lc_mortality)
    .case("cbd", cbd_mortality)
)


# Paths #######################################################################


def _path_counts(run_config: RunConfig) -> Dict[str, int]:
    return {
        "train": run_config.train.n_train_paths,
        "eval": run_config.evaluation.n_eval_paths,
        "price": run_config.pricing.n_price_paths,
    }


@stage(output=("train_paths", "eval_paths", "price_paths"))
def simulate_paths(
    run_config: RunConfig,
    market_model: MarketModel,
    mortality_model: Optional[MortalityModel],
    out_dir: Path,
    context: PipelineContext,
):
    """Simulate and store one path set per role, each from its own seed."""
    scenario = run_config.scenario
    seeds = dataclasses.asdict(run_config.seeds)
    results = []
    for role, n_paths in _path_counts(run_config).items():
        if n_paths == 0:
            context.warning("No %s paths requested", role)
            results.append(None)
            continue

        paths = simulate_market(market_model, scenario.M, n_paths, seeds[role])
        if mortality_model is not None:
            deltas = simulate_deltas(
                mortality_model, scenario.x0, scenario.y0, scenario.M, n_paths, seeds[role]
            )
            paths = paths.with_deltas(deltas)

        for path in save_paths(paths, out_dir / "paths", role):
            context.add_artifact(path)
        stats = path_stats(paths)
        _write_csv(context, stats.assets, out_dir / "paths" / f"{role}.stats.csv")
        context.info("Simulated %d %s paths", n_paths, role)
        results.append(paths)
    return tuple(results)


@stage(output=("train_paths", "eval_paths", "price_paths"))
def load_path_sets(out_dir: Path, context: PipelineContext):
    """Reload path sets written by an earlier simulate stage."""
    results = []
    for role in ROLES:
        if not (out_dir / "paths" / f"{role}.json").is_file():
            results.append(None)
            continue
        results.append(load_paths(out_dir / "paths", role))
        context.info("Loaded %s paths", role)
    return tuple(results)


def _require(paths: Optional[PathSet], role: str, stage_name: str) -> PathSet:
    if paths is None:
        raise StageFailedError(
            f"{stage_name} requires {role} paths; run the simulate stage first", stage=stage_name
        )
    return paths


# Training ####################################################################


@stage(output=("trained_policy", "trained_params"))
def train_policy(
    run_config: RunConfig,
    train_paths: Optional[PathSet],
    eval_paths: Optional[PathSet],
    out_dir: Path,
    context: PipelineContext,
):
    train_paths = _require(train_paths, "train", "train")
    config = run_config.train_config()
    policy = Policy.for_scenario(run_config.scenario, config.hidden_layers, config.hidden_activation)
    params, report = train(config, run_config.scenario, train_paths, policy=policy, eval_paths=eval_paths)

    _write_json(context, out_dir / "policy.json", _policy_document(policy, params))
    _write_json(context, out_dir / "train_report.json", report.as_dict())
    _write_csv(
        context,
        pd.DataFrame({"objective": report.objective_trace}).rename_axis("iteration"),
        out_dir / "objective_trace.csv",
    )
    return policy, params


@stage(output=("trained_policy", "trained_params"))
def load_trained_policy(run_config: RunConfig, out_dir: Path):
    path = out_dir / "policy.json"
    if not path.is_file():
        raise StageFailedError(
            f"No trained policy at {path}; run the train stage first", stage="train"
        )
    return _read_policy(path, run_config)


# Frontier ####################################################################


@stage
def check_frontier_paths(train_paths: Optional[PathSet], eval_paths: Optional[PathSet]):
    train_paths = _require(train_paths, "train", "frontier")
    eval_paths = _require(eval_paths, "eval", "frontier")
    if train_paths.fingerprint() == eval_paths.fingerprint():
        raise ValidationError("Training and evaluation paths must differ")


@stage(name="Train frontier point gamma={gamma}")
def train_frontier_point(
    gamma: float,
    run_config: RunConfig,
    train_paths: PathSet,
    eval_paths: PathSet,
    frontier_points: List[FrontierPoint],
):
    point = train_point(gamma, run_config.train_config(), run_config.scenario, train_paths, eval_paths)
    frontier_points.append(point)


@stage
def write_frontier(
    run_config: RunConfig,
    frontier_points: List[FrontierPoint],
    frontier_errors: List[Exception],
    out_dir: Path,
    context: PipelineContext,
):
    for error in frontier_errors:
        context.warning("Frontier point failed: %s", error)
    if not frontier_points:
        raise StageFailedError("No frontier point could be trained", stage="frontier")

    points = sorted(frontier_points, key=lambda point: point.cvar_alpha)
    _write_csv(
        context,
        pd.DataFrame.from_records([point.as_row() for point in points]),
        out_dir / "frontier.csv",
        index=False,
    )
    config = run_config.train_config()
    policy = Policy.for_scenario(run_config.scenario, config.hidden_layers, config.hidden_activation)
    for point in points:
        _write_json(
            context,
            out_dir / "frontier" / f"policy_gamma_{point.gamma:g}.json",
            _policy_document(policy, point.params, gamma=point.gamma),
        )


frontier_sweep = (
    check_frontier_paths,
    SetVar(
        gammas=lambda ctx: ctx.state.run_config.frontier.gammas,
        frontier_points=lambda ctx: [],
        frontier_errors=lambda ctx: [],
    ),
    ForEach("gamma", "gammas").loop(
        CaptureErrors("frontier_errors", except_types=TontineFlowError).nodes(train_frontier_point)
    ),
    write_frontier,
)


# Evaluation ##################################################################


@stage
def evaluate_policy(
    run_config: RunConfig,
    trained_policy: Policy,
    trained_params: PolicyParams,
    eval_paths: Optional[PathSet],
    out_dir: Path,
    context: PipelineContext,
):
    eval_paths = _require(eval_paths, "eval", "eval")
    scenario = run_config.scenario
    evaluation = run_config.evaluation
    controller = NeuralController(trained_policy, trained_params)

    metrics = evaluate(controller, eval_paths, scenario)
    benchmark = benchmark_search(eval_paths, scenario, evaluation.benchmark_step, evaluation.benchmark_q)
    _write_json(
        context,
        out_dir / "metrics.json",
        {
            "policy": dataclasses.asdict(metrics),
            "w_star": trained_params.w_star,
            "benchmark": {
                "weights": benchmark.weights,
                "cvar": benchmark.cvar,
                "var": benchmark.var,
                "ew_annualized": benchmark.ew_annualized,
            },
        },
    )
    _write_csv(context, benchmark.candidates, out_dir / "benchmark.csv", index=False)

    heatmap = export_heatmap(controller, scenario, times=evaluation.heatmap_times, paths=eval_paths)
    _write_csv(context, heatmap.withdrawal, out_dir / "heatmaps" / "withdrawal.csv")
    for asset, frame in heatmap.allocations.items():
        _write_csv(context, frame, out_dir / "heatmaps" / f"allocation_{asset}.csv")
    _write_csv(context, heatmap.percentiles, out_dir / "heatmaps" / "wealth_percentiles.csv")


# Pricing #####################################################################


def _frontier_controllers(run_config: RunConfig, context: PipelineContext, out_dir: Path):
    points: Sequence[FrontierPoint] = context.state.get("frontier_points") or ()
    if points:
        config = run_config.train_config()
        policy = Policy.for_scenario(run_config.scenario, config.hidden_layers, config.hidden_activation)
        return {point.gamma: NeuralController(policy, point.params) for point in points}

    controllers = {}
    for path in sorted((out_dir / "frontier").glob("policy_gamma_*.json")):
        policy, params = _read_policy(path, run_config)
        gamma = json.loads(path.read_text())["gamma"]
        controllers[gamma] = NeuralController(policy, params)
    return dict(sorted(controllers.items()))


@stage
def price_guarantee(
    run_config: RunConfig,
    trained_policy: Policy,
    trained_params: PolicyParams,
    price_paths: Optional[PathSet],
    out_dir: Path,
    context: PipelineContext,
):
    if price_paths is None:
        raise PricingError("n_price_paths must be positive")
    scenario = run_config.scenario
    pricing = run_config.pricing_config()
    bins = run_config.evaluation.histogram_bins

    quote, sample = price(NeuralController(trained_policy, trained_params), price_paths, scenario, pricing)
    _write_json(context, out_dir / "mbg" / "quote.json", quote.as_dict())
    _write_csv(context, payout_histogram(sample.payouts, bins), out_dir / "mbg" / "payouts.csv", index=False)
    _write_csv(
        context,
        payout_histogram(sample.payouts, bins, conditional=True),
        out_dir / "mbg" / "payouts_conditional.csv",
        index=False,
    )

    controllers = _frontier_controllers(run_config, context, out_dir)
    if not controllers:
        context.info("No frontier policies; sensitivity grid skipped")
        return
    grid = sensitivity_grid(
        controllers,
        price_paths,
        scenario,
        pricing,
        run_config.evaluation.sensitivity_lambdas,
        run_config.evaluation.sensitivity_alphas,
    )
    _write_csv(context, grid, out_dir / "mbg" / "sensitivity.csv", index=False)


# Manifest ####################################################################


@stage
def write_manifest(
    run_config: RunConfig,
    stages: FrozenSet[str],
    completed: List[str],
    out_dir: Path,
    context: PipelineContext,
):
    """Artifacts with content hashes, the config echo and stage status."""
    pending = [name for name in STAGES if name in stages and name not in completed]
    artifacts = sorted(
        (artifact.as_dict(out_dir) for artifact in context.artifacts.values()),
        key=lambda item: item["path"],
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(
        out_dir / MANIFEST_NAME,
        {
            "status": "complete" if not pending else "incomplete",
            "stages": [name for name in STAGES if name in stages],
            "completed": completed,
            "resume_stages": pending,
            "config": run_config.as_dict(),
            "artifacts": artifacts,
        },
    )


# Pipeline ####################################################################


def build_pipeline(stages: Iterable[str]) -> Pipeline:
    """Pipeline running the requested stages in dependency order."""
    stages = resolve_stages(stages)
    nodes = [prepare_output]

    if "simulate" in stages:
        nodes += [market_models, mortality_models, simulate_paths, MarkComplete("simulate")]
    else:
        nodes.append(load_path_sets)

    if "train" in stages:
        nodes += [train_policy, MarkComplete("train")]

    if "frontier" in stages:
        nodes += [*frontier_sweep, MarkComplete("frontier")]

    if stages & {"eval", "price"}:
        if "train" not in stages:
            nodes.append(load_trained_policy)
        if "eval" in stages:
            nodes += [evaluate_policy, MarkComplete("eval")]
        if "price" in stages:
            nodes += [price_guarantee, MarkComplete("price")]

    nodes.append(LogMessage("Run finished; artifacts in {out_dir}"))
    return (
        Pipeline("Tontine run", "Simulate, train, evaluate and price")
        .require_vars(run_config=RunConfig, out_dir=Path)
        .nodes(*nodes)
        .and_finally(write_manifest)
    )


def run(
    run_config: RunConfig,
    stages: Iterable[str] = None,
    out_dir: Path = None,
    context: PipelineContext = None,
) -> PipelineContext:
    """Execute the requested stages and return the pipeline context."""
    stages = resolve_stages(stages)
    out_dir = Path(out_dir or run_config.output_dir)
    return build_pipeline(stages).execute(
        context, run_config=run_config, stages=stages, out_dir=out_dir, completed=[]
    )

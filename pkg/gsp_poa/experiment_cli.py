"""
gsp-poa: one entry point for every experiment.

    gsp-poa poa3 --case i --resolution 2000
    gsp-poa learn --values 0.9,0.6,0.3 --ctrs 1,0.5,0.2 --rounds 200000 --instances 4 --threads 4
    gsp-poa check-ne --config reports/tight_instance.json

Each run writes `<kind>_report.json` (plus `<kind>_rounds_<i>.csv` for learn
and byzantine) into --out. Agents and slots are 0-based everywhere. Exit
codes: 0 ok, 2 invalid input, 3 budget exceeded, 4 invariant breach.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from pydantic import BaseModel, ValidationError

from . import __version__, rng
from .auction_core import (
    CtrProfile,
    ValueProfile,
    normalize_instance,
    optimal_welfare,
    run_gsp,
    social_welfare,
    utility,
)
from .bayesian_sim import StrategyTable, approx_bne_search, bne_epsilon, bpoa_estimate, strategy_sampler
from .byzantine import ByzantineScript, run_byzantine
from .config import LOG_LEVEL, ExperimentConfig, load_config
from .equilibria import (
    DEFAULT_TEST_VALUES,
    GAMMA_BOUND,
    BidGrid,
    check_pure_ne,
    empirical_sampler,
    lemma1_consistency,
    pure_poa_search,
    sample_instance,
    structural_gamma,
    welfare_chain,
    worst_equilibrium,
)
from .errors import BudgetExceeded, InvariantBreach
from .learning_dynamics import (
    average_welfare,
    empirical_cce_check,
    hedge_regret_bound,
    make_learners,
    mixture_regret,
    regret_profile,
    run_repeated_auction,
    welfare_slack,
)
from .poa_frontier import (
    THREE_SLOT_POA,
    CaseTag,
    maximize_3slot,
    maximize_cyclic,
    padding_candidates,
    poa_case_ii,
    poa_cyclic,
    symmetry_map,
    tight_instance_3slot,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BUDGET = 3
EXIT_INVARIANT = 4

# draws per tested value when measuring gamma on a learning run
GAMMA_SAMPLES = 20_000

# per-run checks that measured play can only fail through a defect
RUN_INVARIANTS: dict[str, tuple[tuple[str, str], ...]] = {
    "learn": (
        ("bound_holds", "SW >= (gamma/2 - slack) OPT under no-regret play"),
        ("gamma_consistent", "SW >= gamma_hat/2 OPT"),
        ("cce.holds", "play is an epsilon-CCE at its max regret"),
    ),
    "byzantine": (
        ("bound_holds", "SW >= (gamma/2 - slack) OPT_N with scripted agents"),
        ("gamma_consistent", "SW >= gamma_hat/2 OPT_N"),
    ),
}


class ExperimentReport(BaseModel):
    kind: str
    version: str
    config_hash: str
    config: dict[str, Any]
    result: dict[str, Any]


def _finite(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


async def _fan_out(jobs: Sequence[Callable[[], Any]], threads: int) -> list[Any]:
    """Run independent jobs on at most `threads` workers; results in job order."""
    semaphore = asyncio.Semaphore(threads)

    async def run_one(job: Callable[[], Any]) -> Any:
        async with semaphore:
            return await asyncio.to_thread(job)

    return await asyncio.gather(*(run_one(job) for job in jobs))


def _fan(config: ExperimentConfig, jobs: Sequence[Callable[[], Any]]) -> list[Any]:
    return asyncio.run(_fan_out(jobs, config.threads))


def _instance(config: ExperimentConfig, index: int) -> tuple[ValueProfile, CtrProfile]:
    if config.values is not None:
        instance = normalize_instance(config.values, config.ctrs)
        return instance.values, instance.ctrs
    return sample_instance(config.n_slots, config.seed, index, sampler="uniform")


def run_simulate(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    instance = normalize_instance(config.values, config.ctrs, config.bids)
    outcome = run_gsp(instance.bids, instance.ctrs)
    sw = social_welfare(outcome.assignment, instance.values, instance.ctrs)
    opt = optimal_welfare(instance.values, instance.ctrs)
    print(f"✓ GSP on {instance.n_agents} agents x {instance.n_slots} slots: SW {sw:.6g}, OPT {opt:.6g}")
    return {
        "agents": instance.n_agents,
        "slots": instance.n_slots,
        "outcome": outcome.model_dump(),
        "utilities": [utility(i, instance.values, outcome) for i in range(instance.values.n)],
        "social_welfare": sw,
        "optimal_welfare": opt,
        "ratio": opt / sw if sw > 0 else None,
    }


def run_check_ne(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    instance = normalize_instance(config.values, config.ctrs, config.bids)
    values, ctrs, bids = instance.values, instance.ctrs, instance.bids
    grid = BidGrid.uniform(values, config.grid_points)
    verdict = check_pure_ne(bids, values, ctrs, grid, config.epsilon)
    sw = social_welfare(run_gsp(bids, ctrs).assignment, values, ctrs)
    mark = "✓" if verdict.is_equilibrium else "✗"
    print(f"{mark} pure NE at epsilon {verdict.epsilon:.3g}: worst gain {verdict.worst_gain:.3g} (agent {verdict.worst_agent})")
    return {"verdict": verdict.model_dump(), "ratio": optimal_welfare(values, ctrs) / sw if sw > 0 else None}


def run_enumerate(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    if config.values is None:
        result = pure_poa_search(
            config.n_slots,
            config.instances,
            grid_points=config.grid_points,
            seed=config.seed,
            sampler=config.sampler,
            allocation=config.allocation,
            budget=config.budget,
        )
        print(f"✓ {result.equilibria} pure NE over {result.instances} instances: worst OPT/SW {result.worst_ratio:.6f}")
        data = result.model_dump()
        data["worst_ratio"] = _finite(result.worst_ratio)
        return data
    values, ctrs = _instance(config, 0)
    summary = worst_equilibrium(values, ctrs, BidGrid.uniform(values, config.grid_points), config.allocation, config.budget)
    print(f"✓ {summary.count} pure NE: worst OPT/SW {summary.worst_ratio:.6f}")
    return {
        "equilibria": summary.count,
        "worst_ratio": _finite(summary.worst_ratio),
        "worst_bids": None if summary.worst_bids is None else list(summary.worst_bids.bids),
    }


def _learning_run(config: ExperimentConfig, index: int, out: Path) -> dict[str, Any]:
    values, ctrs = _instance(config, index)
    grid = BidGrid.uniform(values, config.grid_points)
    learners = make_learners(values, ctrs, grid, config.rounds)
    sequence = run_repeated_auction(values, ctrs, learners, config.rounds, rng.child_seed(config.seed, index))
    sequence.to_frame(values).to_csv(out / f"learn_rounds_{index}.csv", index=False)

    regrets = regret_profile(sequence, values, burn_in=config.burn_in)
    opt = optimal_welfare(values, ctrs)
    sw = average_welfare(sequence, values, config.burn_in)
    slack = welfare_slack(regrets, values, ctrs, grid, opt)
    full = regret_profile(sequence, values) if config.burn_in else regrets
    cce = empirical_cce_check(sequence, values, ctrs, grid, float(full.max()))
    window = sequence.bids[config.burn_in:]
    tests = [[float(v)] for v in values.values]
    gamma = structural_gamma(empirical_sampler(window), ctrs, tests, samples=min(config.samples, GAMMA_SAMPLES), seed=config.seed)
    top = ctrs.alphas[0]
    return {
        "values": list(values.values),
        "ctrs": list(ctrs.alphas),
        "regret": [float(r) for r in regrets],
        "mixture_regret": [float(r) for r in mixture_regret(sequence)],
        "hedge_bound": [hedge_regret_bound(config.rounds, len(a), top * v) for a, v in zip(sequence.actions, values.values)],
        "average_welfare": sw,
        "optimal_welfare": opt,
        "pota": opt / sw if sw > 0 else None,
        "slack": slack,
        "bound_holds": opt <= 0 or sw / opt >= GAMMA_BOUND / 2 - slack,
        "cce": cce.model_dump(),
        "gamma": gamma.model_dump(),
        "gamma_consistent": lemma1_consistency(gamma.gamma_hat, sw, opt),
        "welfare_chain": welfare_chain(window, values, ctrs).model_dump(),
    }


def run_learn(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    runs = _fan(config, [lambda i=i: _learning_run(config, i, out) for i in range(config.instances)])
    for i, run in enumerate(runs):
        mark = "✓" if run["bound_holds"] and run["gamma_consistent"] else "✗"
        print(f"{mark} run {i}: PoTA {run['pota']}, max regret {max(run['regret']):.3g}")
    return {"runs": runs}


def run_bpoa(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    dists, ctrs = list(config.distributions), CtrProfile(alphas=config.ctrs)
    trace = None
    if config.strategy == "search":
        search = approx_bne_search(
            dists, ctrs, config.iterations, config.samples, config.seed, deviation_points=config.grid_points
        )
        table, trace = search.table, search.trace
    else:
        table = StrategyTable.truthful(dists)
    bne = bne_epsilon(table, dists, ctrs, config.samples, config.seed, config.grid_points)
    bpoa = bpoa_estimate(table, dists, ctrs, config.samples, config.seed)
    tests = [d.value_grid(DEFAULT_TEST_VALUES) for d in dists]
    gamma = structural_gamma(strategy_sampler(table, dists), ctrs, tests, samples=config.samples, seed=config.seed)
    print(f"✓ BPoA {bpoa.ratio:.6f} [{bpoa.ci_low:.6f}, {bpoa.ci_high:.6f}], BNE epsilon {bne.epsilon:.3g}")
    return {
        "strategy": config.strategy,
        "table": table.model_dump(),
        "search_trace": trace,
        "bne": bne.model_dump(),
        "bpoa": bpoa.model_dump(),
        "gamma": gamma.model_dump(),
        "gamma_consistent": lemma1_consistency(gamma.gamma_hat, bpoa.e_sw, bpoa.e_opt),
    }


def _byzantine_run(config: ExperimentConfig, index: int, out: Path) -> dict[str, Any]:
    values, ctrs = _instance(config, index)
    pop = config.population
    padded = range(len(config.values), values.n)
    if padded:
        # padding agents have value 0 and bid 0 in every round
        zero = ByzantineScript(kind="constant", bid=0.0)
        pop = pop.model_copy(update={"scripts": {**pop.scripts, **{i: zero for i in padded}}})
    grid = BidGrid.uniform(values, config.grid_points)
    seed = rng.child_seed(config.seed, index)
    samples = min(config.samples, GAMMA_SAMPLES)
    run = run_byzantine(values, ctrs, pop, config.rounds, seed, grid, config.burn_in, samples)
    run.sequence.to_frame(values).to_csv(out / f"byzantine_rounds_{index}.csv", index=False)
    return run.report.model_dump()


def run_byzantine_experiment(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    runs = _fan(config, [lambda i=i: _byzantine_run(config, i, out) for i in range(config.instances)])
    for i, report in enumerate(runs):
        mark = "✗" if report["bound_holds"] is False or not report["gamma_consistent"] else "✓"
        print(f"{mark} run {i}: SW/OPT_N {report['ratio']}, slack {report['slack']:.3g}")
    return {"runs": runs}


def run_poa3(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    case = CaseTag.CASE_I if config.case == "i" else CaseTag.CASE_II
    result = maximize_3slot(case, config.resolution, config.restarts, config.seed)
    data = {
        "value": result.best.value,
        "alphas": list(result.best.ctrs.alphas),
        "evaluations": result.evaluations,
        "optimizer": result.model_dump(),
    }
    if case is CaseTag.CASE_I:
        image = symmetry_map(result.best.ctrs)
        data["symmetric_point"] = {"alphas": list(image.alphas), "value": poa_case_ii(image)}
    mark = "✓" if abs(result.best.value - THREE_SLOT_POA) <= 1e-4 else "✗"
    print(f"{mark} case {config.case}: {result.best.value:.6f} at {tuple(round(a, 5) for a in result.best.ctrs.alphas)}")
    return data


def _cyclic_run(n: int, config: ExperimentConfig) -> dict[str, Any]:
    result = maximize_cyclic(n, config.restarts, config.seed)
    padded = {name: poa_cyclic(ctrs) for name, ctrs in padding_candidates(n).items()}
    return {
        "n": n,
        "value": result.best.value,
        "alphas": list(result.best.ctrs.alphas),
        "evaluations": result.evaluations,
        "padding": padded,
        "padding_attaining": sorted(name for name, v in padded.items() if abs(v - THREE_SLOT_POA) <= 1e-4),
    }


def run_cyclic(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    slots = range(3, config.max_slots + 1)
    runs = _fan(config, [lambda n=n: _cyclic_run(n, config) for n in slots])
    for run in runs:
        print(f"✓ n={run['n']}: {run['value']:.6f} (padding attaining 1.25913: {', '.join(run['padding_attaining']) or 'none'})")
    return {"runs": runs}


def run_tight_instance(config: ExperimentConfig, out: Path) -> dict[str, Any]:
    instance = tight_instance_3slot(epsilon=1e-3 if config.epsilon is None else config.epsilon)
    check = ExperimentConfig(
        kind="check-ne",
        values=instance.values.values,
        ctrs=instance.ctrs.alphas,
        bids=instance.bids.bids,
        grid_points=1000,
        epsilon=1e-3,
    )
    path = out / "tight_instance.json"
    path.write_text(check.model_dump_json(exclude={"out_dir", "threads"}, exclude_defaults=True, indent=2) + "\n", encoding="utf-8")
    print(f"✓ tight instance OPT/SW {instance.ratio:.6f}, max deviation gain {instance.max_gain:.3g}")
    return {**instance.model_dump(), "instance_file": path.name}


RUNNERS: dict[str, Callable[[ExperimentConfig, Path], dict[str, Any]]] = {
    "simulate": run_simulate,
    "check-ne": run_check_ne,
    "enumerate": run_enumerate,
    "learn": run_learn,
    "bpoa": run_bpoa,
    "byzantine": run_byzantine_experiment,
    "poa3": run_poa3,
    "cyclic": run_cyclic,
    "tight-instance": run_tight_instance,
}


def _check_runs(kind: str, result: dict[str, Any]) -> None:
    """Raise on the first run that fails one of RUN_INVARIANTS; None means not applicable."""
    for i, run in enumerate(result.get("runs", ())):
        for key, invariant in RUN_INVARIANTS.get(kind, ()):
            holds = run
            for part in key.split("."):
                holds = holds[part]
            if holds is False:
                raise InvariantBreach(invariant, f"run {i}, {key}")


def run(config: ExperimentConfig) -> Path:
    """Dispatch the experiment and write its report; returns the report path.

    The report is written before the run checks, so a breach leaves it on disk.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("running %s with config %s", config.kind, config.config_hash[:12])
    result = RUNNERS[config.kind](config, out)
    report = ExperimentReport(
        kind=config.kind,
        version=__version__,
        config_hash=config.config_hash,
        config=config.model_dump(mode="json", exclude={"out_dir", "threads"}),
        result=result,
    )
    path = out / f"{config.kind}_report.json"
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    print(f"✓ wrote {path}")
    _check_runs(config.kind, result)
    return path


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()] if text.strip() else []


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="experiment seed (0 <= seed < 2^64)")
    common.add_argument("--out", dest="out_dir", help="report directory")
    common.add_argument("--threads", type=int, help="parallel sub-experiments (never changes results)")
    common.add_argument("--values", type=_floats, help="comma-separated per-click values")
    common.add_argument("--ctrs", type=_floats, help="comma-separated nonincreasing click-through rates")
    common.add_argument("--bids", type=_floats, help="comma-separated bids")
    common.add_argument("--grid-points", type=int)
    common.add_argument("--instances", type=int)
    common.add_argument("--epsilon", type=float)

    parser = argparse.ArgumentParser(prog="gsp-poa", description="Welfare experiments for the GSP auction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="kind", required=True)
    sub.add_parser("simulate", parents=[common], help="run GSP on one bid profile")
    sub.add_parser("check-ne", parents=[common], help="check a bid profile for a pure NE")
    enumerate_ = sub.add_parser("enumerate", parents=[common], help="enumerate pure NE and their worst ratio")
    enumerate_.add_argument("--n-slots", type=int)
    enumerate_.add_argument("--sampler", choices=["boundary", "uniform"])
    enumerate_.add_argument("--allocation", choices=["any", "fixed_point", "cyclic"])
    enumerate_.add_argument("--budget", type=int)
    for name, text in (("learn", "repeated GSP with Hedge bidders"), ("byzantine", "Hedge bidders next to scripted bidders")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--rounds", type=int)
        p.add_argument("--burn-in", type=int)
        if name == "learn":
            p.add_argument("--n-slots", type=int)
    bpoa = sub.add_parser("bpoa", parents=[common], help="Bayes-Nash epsilon and BPoA estimate")
    bpoa.add_argument("--samples", type=int)
    bpoa.add_argument("--strategy", choices=["truthful", "search"])
    bpoa.add_argument("--iterations", type=int)
    poa3 = sub.add_parser("poa3", parents=[common], help="maximize the 3-slot PoA objective")
    poa3.add_argument("--case", choices=["i", "ii"])
    poa3.add_argument("--resolution", type=int)
    poa3.add_argument("--restarts", type=int)
    cyclic = sub.add_parser("cyclic", parents=[common], help="maximize the cyclic n-slot objective")
    cyclic.add_argument("--max-slots", type=int)
    cyclic.add_argument("--restarts", type=int)
    sub.add_parser("tight-instance", parents=[common], help="build and verify the tight 3-slot instance")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=LOG_LEVEL.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = vars(build_parser().parse_args(argv))
    path = args.pop("config")
    try:
        config = load_config(path, args)
        run(config)
    except (ValidationError, ValueError, FileNotFoundError) as e:
        print(f"✗ invalid input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ZeroDivisionError as e:
        print(f"✗ undefined ratio: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BudgetExceeded as e:
        print(f"✗ budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except InvariantBreach as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

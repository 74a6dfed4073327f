#!/usr/bin/env python3
"""
FleetWatt: tokens-per-watt planner for LLM inference GPUs and fleets
Analytical power, roofline and KV-capacity models plus routing-topology search

Usage:
    python main.py sweep-context --profile h100-llama70b
    python main.py compare --generations --profile H100-SXM5:Llama-3.1-70B --compare B200-SXM:Llama-3.1-70B
    python main.py plan --archetype short-dominant --topology fleetopt --boundary 4K --gamma 2
    python main.py optimize --compare b200-llama70b --format json --out output/reports/opt.json
    python main.py ingest-trace --trace traces/conv.jsonl --cdf-out output/traces/conv.cdf.json
    python main.py classify --trace traces/conv.jsonl
"""

import os
import sys
import argparse
import logging
from typing import Any, Dict, List, Optional

import config
from planner import (
    ConfigError, DomainError, InfeasibleModel, PlanningError, TraceIngestionError,
    GpuProfile, LatencySlo, Topology, TopologyKind, RoutingPool, ContextCdf,
    context_sweep, halving_ratios, compare_generations, compare_models, compare_routing,
    decode_iteration_latency, plan_topology, optimize, gain_decomposition,
    multiplicativity_check, synth_archetype, ingest_trace, read_trace,
    classify_archetype, archetype_guidance,
)
from utils import Catalog, Report, ReportSaver, RunConfig, TraceDownloader, load_run_config, save_cdf, load_cdf
from utils.helpers import format_tokens, parse_tokens

# Setup logging
logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL),
    format=config.LOG_FORMAT
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_INGESTION = 4

QUANTILES = (0.5, 0.9, 0.95, 0.99)


class FleetWatt:
    """Command orchestrator: resolves subjects and workloads, builds reports"""

    def __init__(self, run_config: RunConfig, catalog: Catalog = None, show_progress: bool = False):
        self.config = run_config
        self.catalog = catalog or Catalog.load(
            run_config.gpu_overrides, run_config.model_overrides, run_config.profile_overrides
        )
        self.saver = ReportSaver(run_config.format)
        self.show_progress = show_progress

    # Resolution

    def profile(self, subject: str) -> GpuProfile:
        return self.catalog.profile(subject, **self.config.computed_profile_args())

    def slo(self) -> LatencySlo:
        return LatencySlo(percentile=self.config.slo["percentile"], bound_ms=self.config.slo["bound_ms"])

    def workload(self) -> ContextCdf:
        source = self.config.workload
        if source.get("archetype"):
            return synth_archetype(source["archetype"], **dict(source.get("params") or {}))
        if source.get("cdf"):
            return load_cdf(source["cdf"])
        path = TraceDownloader().resolve(source["trace"])
        return ingest_trace(
            read_trace(path),
            label=os.path.splitext(os.path.basename(path))[0],
            default_output_len=self.config.default_output_len,
            show_progress=self.show_progress,
        )

    def topology(self) -> Topology:
        t = self.config.topology
        return Topology(TopologyKind(t["kind"]), t["boundary"], t["gamma"], t["long_window"])

    def _report(self, title: str, profiles: List[GpuProfile]) -> Report:
        """Report skeleton carrying quality tags and the resolved config"""
        meta = {
            "quality": {p.name: p.gpu.quality.value for p in profiles},
            "w_quality": {p.name: p.w_quality.value for p in profiles},
        }
        return Report(title=title, meta=meta, run_config=self.config.to_dict())

    # Commands

    def cmd_sweep_context(self) -> Report:
        """n_max, saturated power and tok/W across context windows"""
        profile = self.profile(self.config.profile)
        points = context_sweep(profile, self.config.windows)

        report = self._report(f"Context sweep: {profile.name}", [profile])
        report.meta["profile"] = profile.to_dict()
        table = report.table("Context sweep", [
            ("context", "Context", ""), ("n_max", "n_max", "d"), ("power_w", "P_sat (W)", ".0f"),
            ("throughput", "tok/s", ".0f"), ("tau_ms", "tau (ms)", ".2f"), ("tok_per_watt", "tok/W", ".2f"),
        ])
        for point in points:
            table.add_row(
                context=format_tokens(point.ctx_window),
                n_max=point.n_max,
                power_w=point.power,
                throughput=point.throughput,
                tau_ms=decode_iteration_latency(profile, point.n_active, point.l_mean),
                tok_per_watt=point.tok_per_watt,
            )

        try:
            ratios = halving_ratios(points)
        except DomainError as e:
            logger.warning(f"Skipping halving ratios: {e}")
        else:
            halving = report.table("Halving ratios", [
                ("from", "From", ""), ("to", "To", ""), ("ratio", "tok/W ratio", ".3f"),
            ])
            for prev, cur, ratio in zip(points, points[1:], ratios):
                halving.add_row(**{"from": format_tokens(prev.ctx_window), "to": format_tokens(cur.ctx_window),
                                   "ratio": ratio})
        return report

    def cmd_compare(self, mode: str) -> Report:
        """Model, routing or generation comparison"""
        if mode == "models":
            return self._compare_models()
        if mode == "routing":
            return self._compare_routing()
        if mode == "generations":
            return self._compare_generations()
        raise ConfigError(f"unknown comparison '{mode}'")

    def _compare_models(self) -> Report:
        subjects = [f"{gpu}:{model}" for model in self.config.compare_models for gpu in self.config.compare_gpus]
        if len(subjects) < 2:
            raise ConfigError("model comparison needs at least two model/GPU subjects")

        profiles, infeasible = [], {}
        for subject in subjects:
            try:
                profiles.append(self.profile(subject))
            except InfeasibleModel as e:
                logger.warning(f"{subject}: {e}")
                infeasible[subject] = e

        report = self._report(f"Model comparison at {format_tokens(self.config.ctx_window)}", profiles)
        table = report.table("Models", [
            ("model", "Model", ""), ("tp", "TP", "d"), ("gpu", "GPU", ""), ("w_ms", "W (ms)", ".2f"),
            ("n_max", "n_max", "d"), ("throughput", "tok/s", ".0f"), ("tok_per_watt", "tok/W", ".2f"),
            ("quality", "Quality", ""), ("w_quality", "W", ""), ("note", "Note", ""),
        ])
        rows = {f"{r.gpu}:{r.model}": r for r in compare_models(profiles, self.config.ctx_window)}
        by_name = {p.name: p for p in profiles}
        for subject in subjects:
            gpu_name, model_name = subject.split(":", 1)
            if subject in infeasible:
                table.add_row(model=model_name, tp=self.catalog.model(model_name).tp, gpu=gpu_name,
                              note=f"infeasible: {infeasible[subject].deficit_bytes / 1e9:.1f} GB short")
                continue
            row, profile = rows[subject], by_name[subject]
            table.add_row(
                model=row.model, tp=row.tp, gpu=row.gpu, w_ms=profile.w_ms, n_max=row.point.n_max,
                throughput=row.point.throughput, tok_per_watt=row.point.tok_per_watt,
                quality=profile.gpu.quality.value, w_quality=profile.w_quality.value, note=row.note,
            )
        return report

    def _compare_routing(self) -> Report:
        if len(self.config.routing) < 2:
            raise ConfigError("routing comparison needs at least two pools")
        pools = [RoutingPool(r["label"], self.profile(r["profile"]), r["ctx_window"]) for r in self.config.routing]

        report = self._report(f"Routing comparison at rho={self.config.rho:g}", [p.profile for p in pools])
        table = report.table("Routing", [
            ("pool", "Pool", ""), ("context", "Context", ""), ("n_max", "n_max", "d"),
            ("n_active", "n_active", ".0f"), ("power_w", "P (W)", ".0f"), ("tok_per_watt", "tok/W", ".2f"),
            ("quality", "Quality", ""), ("w_quality", "W", ""),
        ])
        for pool, point in compare_routing(pools, self.config.rho):
            table.add_row(
                pool=pool.label, context=format_tokens(pool.ctx_window), n_max=point.n_max,
                n_active=point.n_active, power_w=point.power, tok_per_watt=point.tok_per_watt,
                quality=pool.profile.gpu.quality.value, w_quality=pool.profile.w_quality.value,
            )
        return report

    def _compare_generations(self) -> Report:
        if self.config.compare:
            subjects = [self.config.profile] + self.config.compare
        else:
            model = self.profile(self.config.profile).model.name
            subjects = [f"{gpu}:{model}" for gpu in self.config.compare_gpus]
        profiles = [self.profile(s) for s in subjects]
        if len(profiles) < 2:
            raise ConfigError("generation comparison needs at least two subjects")
        models = {p.model.name for p in profiles}
        if len(models) > 1:
            raise ConfigError(f"generation comparison needs one model, got {', '.join(sorted(models))}")

        comparison = compare_generations(profiles, self.config.ctx_window)
        report = self._report(
            f"GPU generation comparison for {models.pop()} at {format_tokens(self.config.ctx_window)}", profiles
        )
        table = report.table("Generations", [
            ("gpu", "GPU", ""), ("w_ms", "W (ms)", ".2f"), ("n_max", "n_max", "d"), ("power_w", "P_sat (W)", ".0f"),
            ("tok_per_watt", "tok/W", ".2f"), ("cost_rate", "$/hr", ".1f"), ("tok_per_dollar_m", "tok/$M", ".2f"),
            ("quality", "Quality", ""), ("w_quality", "W", ""),
        ])
        for row in comparison.rows:
            table.add_row(
                gpu=row.label, w_ms=row.profile.w_ms, n_max=row.point.n_max, power_w=row.point.power,
                tok_per_watt=row.point.tok_per_watt, cost_rate=row.profile.gpu.cost_rate,
                tok_per_dollar_m=row.tok_per_dollar / 1e6,
                quality=row.profile.gpu.quality.value, w_quality=row.profile.w_quality.value,
            )
        multipliers = report.table("Multipliers", [
            ("base", "Base", ""), ("other", "Other", ""),
            ("tok_per_watt", "tok/W x", ".2f"), ("tok_per_dollar", "tok/$ x", ".2f"),
        ])
        for m in comparison.multipliers:
            multipliers.add_row(base=m.base, other=m.other, tok_per_watt=m.tok_per_watt,
                                tok_per_dollar=m.tok_per_dollar)
        return report

    def cmd_plan(self) -> Report:
        """Size a fixed topology"""
        profile = self.profile(self.config.profile)
        topology = self.topology()
        workload = self.workload()
        plan = plan_topology(topology, workload, lambda window: profile, self.config.lam, self.slo())

        report = self._report(f"Fleet plan: {topology.label} on {profile.name}", [profile])
        report.meta.update({
            "topology": topology.label,
            "workload": workload.label,
            "lam": self.config.lam,
            "slo": plan.slo.to_dict(),
            "total_instances": plan.total_instances,
            "fleet_power_kw": plan.fleet_power_kw,
            "fleet_tok_per_watt": plan.fleet_tok_per_watt,
        })
        self._pool_table(report, plan)
        return report

    def _pool_table(self, report: Report, plan, name: str = "Pools"):
        table = report.table(name, [
            ("pool", "Pool", ""), ("gpu", "GPU", ""), ("context", "Context", ""), ("lam", "req/s", ".2f"),
            ("instances", "GPUs", "d"), ("n_active_mean", "n_act", ".1f"), ("power_kw", "kW", ".1f"),
            ("token_rate", "tok/s", ".0f"), ("tok_per_watt", "tok/W", ".2f"),
        ])
        for pool in plan.pools:
            table.add_row(
                pool=pool.config.label, gpu=pool.config.profile.gpu.name,
                context=format_tokens(pool.config.ctx_window), lam=pool.config.lam, instances=pool.instances,
                n_active_mean=pool.n_active_mean, power_kw=pool.pool_power_kw,
                token_rate=pool.pool_token_rate, tok_per_watt=pool.tok_per_watt,
            )

    def _optimize(self, profile: GpuProfile, workload: ContextCdf):
        return optimize(
            workload, lambda window: profile, self.config.lam, self.slo(),
            self.config.boundary_grid, self.config.gamma_grid,
            long_window=self.config.topology["long_window"], show_progress=self.show_progress,
        )

    def cmd_optimize(self) -> Report:
        """Grid search; gain decomposition when a second subject is configured"""
        base_profile = self.profile(self.config.profile)
        workload = self.workload()

        logger.info("=" * 60)
        logger.info(f"Optimizing topology for {base_profile.name} on {workload.label}")
        logger.info("=" * 60)
        base = self._optimize(base_profile, workload)

        profiles = [base_profile]
        new = None
        if self.config.compare:
            new_profile = self.profile(self.config.compare[0])
            profiles.append(new_profile)
            logger.info("=" * 60)
            logger.info(f"Optimizing topology for {new_profile.name}")
            logger.info("=" * 60)
            new = self._optimize(new_profile, workload)

        report = self._report(f"Topology optimization on {workload.label}", profiles)
        report.meta.update({
            "workload": workload.label,
            "lam": self.config.lam,
            "slo": self.slo().to_dict(),
            "best": base.best.topology.label,
            "best_tok_per_watt": base.best.tok_per_watt,
            "topology_gain": base.gain,
        })
        self._ranking_table(report, base, f"Candidates: {base_profile.name}")
        self._pool_table(report, base.best.plan, f"Best plan: {base_profile.name}")

        if new is not None:
            report.meta["best_new"] = new.best.topology.label
            self._ranking_table(report, new, f"Candidates: {profiles[1].name}")
            if base.baseline is None or new.baseline is None:
                logger.warning("Homogeneous baseline infeasible; skipping gain decomposition")
            else:
                d = gain_decomposition(base.baseline.tok_per_watt, base.best.tok_per_watt,
                                       new.baseline.tok_per_watt, new.best.tok_per_watt)
                gains = report.table("Gain decomposition", [
                    ("delta_topo", "topology", ".2f"), ("delta_gen", "generation", ".2f"),
                    ("delta_combined", "combined", ".2f"), ("delta_topo_new", "topology (new GPU)", ".2f"),
                    ("delta_gen_opt", "generation (optimized)", ".2f"),
                    ("deviation", "multiplicativity deviation", ".3f"),
                ])
                gains.add_row(delta_topo=d.delta_topo, delta_gen=d.delta_gen, delta_combined=d.delta_combined,
                              delta_topo_new=d.delta_topo_new, delta_gen_opt=d.delta_gen_opt,
                              deviation=multiplicativity_check(d))
        return report

    def _ranking_table(self, report: Report, result, name: str):
        table = report.table(name, [
            ("rank", "#", "d"), ("topology", "Topology", ""), ("boundary", "B_short", ""),
            ("gamma", "gamma", "g"), ("instances", "GPUs", "d"), ("power_kw", "kW", ".1f"),
            ("tok_per_watt", "tok/W", ".3f"), ("gain", "vs homo", ".2f"),
        ])
        homo = result.baseline.tok_per_watt if result.baseline is not None else None
        for rank, candidate in enumerate(result.ranking, start=1):
            topo = candidate.topology
            table.add_row(
                rank=rank, topology=topo.label, boundary=format_tokens(topo.boundary), gamma=topo.gamma,
                instances=candidate.plan.total_instances, power_kw=candidate.plan.fleet_power_kw,
                tok_per_watt=candidate.tok_per_watt,
                gain=candidate.tok_per_watt / homo if homo else None,
            )

    def cmd_ingest_trace(self, cdf_out: Optional[str] = None) -> Report:
        """Build a CDF from a trace and optionally export it"""
        if not self.config.workload.get("trace"):
            raise ConfigError("ingest-trace needs a trace (--trace or workload.trace)")
        cdf = self.workload()
        if cdf_out:
            save_cdf(cdf, cdf_out)

        report = self._report(f"Trace CDF: {cdf.label}", [])
        report.meta.update({
            "label": cdf.label,
            "points": len(cdf.points),
            "mean_length": cdf.mean_length,
            "mean_output_len": cdf.mean_output_len,
            "archetype": classify_archetype(cdf).value,
        })
        self._quantile_table(report, cdf)
        return report

    def cmd_classify(self) -> Report:
        """Archetype class and topology guidance for the configured workload"""
        cdf = self.workload()
        archetype = classify_archetype(cdf)
        guidance = archetype_guidance(archetype)

        report = self._report(f"Workload archetype: {cdf.label}", [])
        table = report.table("Archetype", [
            ("share_8k", "P[<=8K]", ".3f"), ("archetype", "Class", ""), ("workload", "Workload", ""),
            ("topology", "Topology", ""), ("gpu", "GPU", ""),
        ])
        table.add_row(share_8k=cdf.prob_at_most(config.CLASSIFY_WINDOW), archetype=archetype.value, **guidance)
        self._quantile_table(report, cdf)
        return report

    def _quantile_table(self, report: Report, cdf: ContextCdf):
        table = report.table("Quantiles", [("quantile", "q", ".2f"), ("length", "tokens", "d")])
        for q in QUANTILES:
            table.add_row(quantile=q, length=cdf.quantile(q))

    # Output

    def emit(self, report: Report, out: Optional[str] = None) -> None:
        if out:
            self.saver.save(report, out)
        else:
            sys.stdout.write(self.saver.render(report))


def _csv_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Run-config values given on the command line"""
    overrides: Dict[str, Any] = {}
    simple = {
        "format": "format", "profile": "profile", "lam": "lam", "rho": "rho",
        "ctx_window": "ctx_window", "bw_efficiency": "bw_efficiency",
        "reserve_gb": "vram_reserve_gb", "kv_sharding": "kv_sharding",
    }
    for arg, key in simple.items():
        value = getattr(args, arg, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "clamp_infeasible", False):
        overrides["clamp_infeasible"] = True
    if getattr(args, "compare", None):
        overrides["compare"] = _csv_list(args.compare)
    if getattr(args, "windows", None):
        overrides["windows"] = _csv_list(args.windows)
    if getattr(args, "slo_ms", None) is not None:
        overrides["slo"] = {"bound_ms": args.slo_ms}

    sources = {key: getattr(args, key, None) for key in ("trace", "archetype", "cdf")}
    given = {k: v for k, v in sources.items() if v}
    if len(given) > 1:
        raise ConfigError(f"give one workload source, got {', '.join(sorted(given))}")
    if given:
        overrides["workload"] = dict(given)

    topology = {}
    if getattr(args, "topology", None):
        topology["kind"] = args.topology
        if args.topology != TopologyKind.FLEET_OPT.value:
            # a gamma from the config file only applies to fleetopt
            topology["gamma"] = 1.0
    if getattr(args, "boundary", None):
        topology["boundary"] = args.boundary
    if getattr(args, "gamma", None) is not None:
        topology["gamma"] = args.gamma
    if getattr(args, "long_window", None):
        topology["long_window"] = args.long_window
    if topology:
        overrides["topology"] = topology
    if getattr(args, "boundaries", None):
        overrides["boundary_grid"] = _csv_list(args.boundaries)
    if getattr(args, "gammas", None):
        overrides["gamma_grid"] = _csv_list(args.gammas)
    return overrides


def parse_args(argv: Optional[List[str]] = None):
    """Parse command line arguments"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str,
                        help=f'Run config file (default: ${config.CONFIG_ENV_VAR})')
    common.add_argument('--format', '-f', type=str, choices=config.OUTPUT_FORMATS,
                        help=f'Report format (default: {config.OUTPUT_FORMAT})')
    common.add_argument('--out', '-o', type=str, help='Write the report here instead of stdout')
    common.add_argument('--profile', '-p', type=str,
                        help='Subject: calibrated profile name or GPU:MODEL')
    common.add_argument('--compare', type=str, help='Comma-separated extra subjects')
    common.add_argument('--bw-efficiency', type=float, help='Achieved fraction of HBM bandwidth')
    common.add_argument('--reserve-gb', type=float, help='Per-GPU VRAM reserve in GB')
    common.add_argument('--kv-sharding', type=str, choices=['tp_sharded', 'replicated'],
                        help='KV head layout for computed profiles')
    common.add_argument('--clamp-infeasible', action='store_true',
                        help='Floor the KV budget of models that do not fit instead of failing')
    common.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')

    workload = argparse.ArgumentParser(add_help=False)
    workload.add_argument('--trace', type=str, help='JSONL/CSV trace file or http(s) URL')
    workload.add_argument('--archetype', type=str, help='short-dominant, mixed or long-dominant')
    workload.add_argument('--cdf', type=str, help='CDF file written by ingest-trace')

    fleet = argparse.ArgumentParser(add_help=False)
    fleet.add_argument('--lam', type=float, help='Arrival rate (requests/second)')
    fleet.add_argument('--slo-ms', type=float, help='P99 TTFT bound in milliseconds')
    fleet.add_argument('--long-window', type=parse_tokens, help='Long pool context window')

    parser = argparse.ArgumentParser(
        description='Tokens-per-watt planner for LLM inference GPUs and fleets',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python main.py sweep-context --profile b200-llama70b
    python main.py compare --routing --rho 0.85
    python main.py optimize --archetype short-dominant --compare b200-llama70b
    python main.py classify --trace https://example.org/trace.jsonl
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    sweep = sub.add_parser('sweep-context', parents=[common], help='n_max and tok/W vs context window')
    sweep.add_argument('--windows', type=str, help='Comma-separated windows, e.g. 2K,4K,8K')

    compare = sub.add_parser('compare', parents=[common], help='Model, routing or generation comparison')
    mode = compare.add_mutually_exclusive_group(required=True)
    mode.add_argument('--models', dest='mode', action='store_const', const='models')
    mode.add_argument('--routing', dest='mode', action='store_const', const='routing')
    mode.add_argument('--generations', dest='mode', action='store_const', const='generations')
    compare.add_argument('--ctx-window', type=parse_tokens, help='Context window for model/generation rows')
    compare.add_argument('--rho', type=float, help='Utilization for routing rows')

    plan = sub.add_parser('plan', parents=[common, workload, fleet], help='Size a fixed topology')
    plan.add_argument('--topology', type=str, choices=[k.value for k in TopologyKind])
    plan.add_argument('--boundary', type=parse_tokens, help='Short-pool prompt boundary')
    plan.add_argument('--gamma', type=float, help='Short-pool window headroom factor')

    opt = sub.add_parser('optimize', parents=[common, workload, fleet], help='Search routing topologies')
    opt.add_argument('--boundaries', type=str, help='Comma-separated boundary grid')
    opt.add_argument('--gammas', type=str, help='Comma-separated gamma grid')

    ingest = sub.add_parser('ingest-trace', parents=[common, workload], help='Build a CDF from a trace')
    ingest.add_argument('--cdf-out', type=str, help='Export the CDF (JSON or YAML by extension)')

    sub.add_parser('classify', parents=[common, workload], help='Classify the workload archetype')

    return parser.parse_args(argv)


def run(args: argparse.Namespace) -> None:
    run_config = load_run_config(args.config, flag_overrides(args))
    app = FleetWatt(run_config, show_progress=sys.stderr.isatty())

    if args.command == 'sweep-context':
        report = app.cmd_sweep_context()
    elif args.command == 'compare':
        report = app.cmd_compare(args.mode)
    elif args.command == 'plan':
        report = app.cmd_plan()
    elif args.command == 'optimize':
        report = app.cmd_optimize()
    elif args.command == 'ingest-trace':
        report = app.cmd_ingest_trace(args.cdf_out)
    else:
        report = app.cmd_classify()
    app.emit(report, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    args = parse_args(argv)

    # Setup logging level
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        run(args)
    except (ConfigError, DomainError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (InfeasibleModel, PlanningError) as e:
        logger.error(f"Infeasible: {e}")
        return EXIT_INFEASIBLE
    except TraceIngestionError as e:
        logger.error(f"Trace ingestion failed: {e}")
        return EXIT_INGESTION
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

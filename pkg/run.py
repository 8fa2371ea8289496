import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from weaves import configure_logging, load_config
from weaves.errors import PlanError, WeaveError
from weaves.runtime import SchedulerPolicy

logger = logging.getLogger("weaves.run")


def _write_output(data: bytes, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(data)
        logger.info(f"Wrote {len(data)} bytes to {out}")
    else:
        sys.stdout.write(data.decode("utf-8"))
        sys.stdout.flush()


def _print_json(payload: dict):
    print(json.dumps(payload, sort_keys=True, default=str))


def host_command(args, config):
    """Run a tapestry file, optionally with a monitor attached"""
    from weaves.monitor import Monitor, serve
    from weaves.tapestry_config import instantiate, load_tapestry, reseed_plan

    policy = SchedulerPolicy.parse(args.policy or config["SCHEDULER_POLICY"])
    plan = load_tapestry(args.tapestry)
    if args.seed is not None:
        plan = reseed_plan(plan, args.seed)
    handle = instantiate(plan, policy=policy, latency=config["FABRIC_LATENCY"],
                         name=Path(args.tapestry).stem, filename=args.tapestry)

    transport = args.monitor or config["MONITOR_TRANSPORT"]
    service = None
    if transport:
        service = serve(Monitor(handle, timeout=config["MONITOR_TIMEOUT"]), transport)
        logger.info(f"Monitor attached on {service.transport}")

    keep_alive = args.keep_alive or bool(transport)
    if keep_alive:
        signal.signal(signal.SIGTERM, lambda *_: handle.runtime.shutdown())
    try:
        report = handle.run(keep_alive=keep_alive)
    except KeyboardInterrupt:
        logger.info("Host stopped by user")
        return 130
    finally:
        if service is not None:
            service.shutdown()

    sys.stdout.write(report.to_csv())
    if report.deadlock:
        logger.error(f"Deadlock: strings {report.deadlocked} never unblocked")
        return 3
    return 1 if report.errors else 0


def bench_flows_command(args, config):
    from weaves.bench import MODELS, emit_report, emit_setup_report, run_flow_suite

    models = [args.model] if args.model else list(MODELS)
    counts = args.n or list(config["BENCH_FLOW_COUNTS"])
    records = run_flow_suite(models, counts, args.target_ms or config["BENCH_TARGET_MS"],
                             args.reps or config["BENCH_REPS"], config["BENCH_SLICE_MS"])
    _write_output(emit_report(records), args.out)
    if args.setup_out:
        _write_output(emit_setup_report(records), args.setup_out)
    if args.store:
        from weaves.models import ResultsLedger
        ResultsLedger(config["RESULTS_DATABASE_URL"]).store_timings(records)
    return 0


def bench_scale_command(args, config):
    from weaves.bench import run_scalability

    seed = args.seed if args.seed is not None else config["DEFAULT_SEED"]
    reports = [run_scalability(n, seed, args.runs, config["SCALE_PLANE"], config["SWEEP_SWEEPS"])
               for n in args.weaves]
    data = b"".join(r.to_csv() if i == 0 else r.to_csv().split(b"\n", 1)[1] for i, r in enumerate(reports))
    _write_output(data, args.out)
    if args.store:
        from weaves.models import ResultsLedger
        ledger = ResultsLedger(config["RESULTS_DATABASE_URL"])
        for report in reports:
            ledger.store_scale(report)
    status = 0
    for report in reports:
        if not report.identical:
            logger.error(f"Digests differ across runs at {report.n_weaves} weaves: {set(report.digests)}")
            status = 1
    return status


def demo_command(args, config):
    from weaves.tapestry_config import load_tapestry, reseed_plan

    policy = SchedulerPolicy.parse(args.policy or config["SCHEDULER_POLICY"])
    plan = load_tapestry(args.tapestry) if args.tapestry else None
    if plan is not None and args.seed is not None:
        plan = reseed_plan(plan, args.seed)
    seed = args.seed if args.seed is not None else config["DEFAULT_SEED"]

    if args.name == "sullivan":
        from weaves.sullivan import SullivanParams, run_sullivan
        params = (SullivanParams.from_plan(plan) if plan
                  else SullivanParams(args.p, args.rounds or config["SULLIVAN_ROUNDS"], seed, config["SULLIVAN_N2_MAX"]))
        result = run_sullivan(params, plan, policy=policy)
        _print_json({
            "counts": result.counts,
            "oracle_counts": result.oracle_counts,
            "total_sent": result.total_sent,
            "draws_total": result.draws_total,
            "conserved": result.conserved,
            "sentinel_misses": result.sentinel_misses,
        })
        return 0 if result.conserved and result.counts == result.oracle_counts else 1

    if args.name == "sweep":
        from weaves.sweep import SweepParams, run_sweep
        params = (SweepParams.from_plan(plan) if plan
                  else SweepParams(tuple(config["SWEEP_GRID"]), args.n_vms, config["SWEEP_SWEEPS"], seed))
        result = run_sweep(params, plan, policy=policy)
        _print_json({
            "grid": list(params.grid),
            "n_vms": params.n_vms,
            "digest": result.digest,
            "messages": result.messages,
            "values": result.values,
            "wall_ms": round(result.wall_ms, 3),
        })
        return 0

    from weaves.collab import CollabProblem, run_collab, run_pairs
    if args.name == "collab":
        problem = (CollabProblem.from_plan(plan)[0] if plan
                   else CollabProblem(args.forcing, args.u0, args.u1, theta=args.theta))
        result = run_collab(problem, reverse=args.reverse, plan=plan, policy=policy)
        _print_json({"forcing": problem.forcing, "g": result.g, "updates": result.iterations,
                     "history": result.history})
        return 0

    problems = CollabProblem.from_plan(plan) if plan else [
        CollabProblem("minus_two", 0.0, 0.0, theta=args.theta),
        CollabProblem("sine", 0.0, 1.0, theta=args.theta),
    ]
    outcome = run_pairs(tuple(problems[:2]), plan, policy=policy)
    _print_json({"classes": outcome.class_names, "g": [r.g for r in outcome.results],
                 "updates": [r.iterations for r in outcome.results]})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="weaves", description="Weaves runtime host, benchmarks and demos")
    parser.add_argument("--config", help="Alternative config file (default: instance/config.py)")
    sub = parser.add_subparsers(dest="command", required=True)

    host = sub.add_parser("host", help="Run a tapestry file")
    host.add_argument("--tapestry", required=True)
    host.add_argument("--monitor", help="stdio, a socket path, or http:127.0.0.1:<port>")
    host.add_argument("--policy", help="cooperative or preempt:<quantum>")
    host.add_argument("--seed", type=int)
    host.add_argument("--keep-alive", action="store_true")
    host.set_defaults(func=host_command)

    bench = sub.add_parser("bench", help="Overhead and scalability experiments")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    flows = bench_sub.add_parser("flows")
    flows.add_argument("--model", choices=["baseline", "host-threads", "processes", "weaves"])
    flows.add_argument("--n", type=int, action="append")
    flows.add_argument("--target-ms", type=float)
    flows.add_argument("--reps", type=int)
    flows.add_argument("--out")
    flows.add_argument("--setup-out")
    flows.add_argument("--store", action="store_true")
    flows.set_defaults(func=bench_flows_command)
    scale = bench_sub.add_parser("scale")
    scale.add_argument("--weaves", type=int, action="append", required=True)
    scale.add_argument("--seed", type=int)
    scale.add_argument("--runs", type=int, default=3)
    scale.add_argument("--out")
    scale.add_argument("--store", action="store_true")
    scale.set_defaults(func=bench_scale_command)

    demo = sub.add_parser("demo", help="Run one of the bundled programs")
    demo.add_argument("name", choices=["sweep", "sullivan", "collab", "pairs"])
    demo.add_argument("--tapestry")
    demo.add_argument("--policy")
    demo.add_argument("--seed", type=int)
    demo.add_argument("--p", type=int, default=4)
    demo.add_argument("--rounds", type=int, help="Sullivan rounds per rank (default from config)")
    demo.add_argument("--n-vms", type=int, default=1)
    demo.add_argument("--forcing", default="minus_two")
    demo.add_argument("--u0", type=float, default=0.0)
    demo.add_argument("--u1", type=float, default=0.0)
    demo.add_argument("--theta", type=float, default=0.5)
    demo.add_argument("--reverse", action="store_true")
    demo.set_defaults(func=demo_command)
    return parser


def main(argv=None):
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    config = load_config(args.config)
    configure_logging(config)
    try:
        return args.func(args, config)
    except PlanError as e:
        sys.stderr.write(e.render() + "\n")
        return 2
    except WeaveError as e:
        logger.error(f"{e.code}: {e.message}")
        sys.stderr.write(f"error: {e.code}: {e.message}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

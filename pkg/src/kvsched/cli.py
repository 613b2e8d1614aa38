"""Command-line harness: ``kvsched generate | run | compare | verify``.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import Instance, ValidationError, compute_metrics, dump_instance
from .rng import SplitMix64
from .schedulers import SchedulerSpec, parse_scheduler, run_scheduler
from .selectors import SelectorConfig
from .verify import SUITES, example1_instance, run_suite
from .workloads import (
    DistributionKind,
    DistributionSpec,
    gen_3partition,
    gen_adversarial_sf,
    gen_adversarial_sf2,
    gen_partition_makespan,
    gen_synthetic,
    load_trace,
    three_partition_tel,
)

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3
RESULT_COLUMNS = ["scheduler", "n", "tel", "mean_latency", "makespan", "utilization", "wall_ms"]
DEFAULT_HORIZON = "auto"

log = logging.getLogger("kvsched")


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    instance: dict
    schedulers: list[SchedulerSpec] = field(default_factory=list)
    sizes: list[int] | None = None
    out: str = "results"
    seed: int = 0
    jobs: int = 1
    horizon: int | str | None = DEFAULT_HORIZON

    def __post_init__(self):
        if not self.schedulers:
            raise ConfigError("at least one scheduler is required")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.sizes is not None and any(n < 1 for n in self.sizes):
            raise ConfigError(f"sizes must be positive: {self.sizes}")
        if self.horizon not in (None, "auto") and not (isinstance(self.horizon, int) and self.horizon >= 1):
            raise ConfigError(f"horizon must be a positive integer or 'auto', got {self.horizon!r}")


def _parse_horizon(value):
    if value is None or value == "auto" or isinstance(value, int):
        return value
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"horizon must be an integer or 'auto', got {value!r}") from None


def _scheduler_from(item, selector: str | None, epsilon: str | None, seed: int) -> SchedulerSpec:
    try:
        if isinstance(item, str):
            spec = parse_scheduler(item, selector, epsilon)
        else:
            spec = SchedulerSpec.from_dict(item)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad scheduler {item!r}: {exc}") from None
    if spec.selector is not None and spec.selector.seed != seed and spec.kind.value == "sorted_f":
        d = spec.selector.to_dict()
        d["seed"] = seed
        spec = SchedulerSpec(spec.kind, SelectorConfig.from_dict(d), spec.horizon_override, spec.label)
    return spec


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file fields, each overridden by the same-named flag when given."""
    data: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")

    def pick(name, default=None):
        flag = getattr(args, name, None)
        return flag if flag is not None else data.get(name, default)

    inst = dict(data.get("instance", {}))
    for name in ("generator", "n", "M", "trace", "xs", "T"):
        flag = getattr(args, name, None)
        if flag is not None:
            inst[name] = flag
    if not inst:
        raise ConfigError("no instance given (config 'instance' or --generator / --trace)")

    seed = int(pick("seed", 0))
    selector, epsilon = pick("selector"), pick("epsilon")
    items = args.scheduler if getattr(args, "scheduler", None) else data.get("schedulers", [])
    schedulers = [_scheduler_from(item, selector, epsilon, seed) for item in items]
    jobs = pick("jobs")
    if jobs is None:
        jobs = int(os.environ.get("KVSCHED_JOBS", "1"))
    sizes = pick("sizes")
    if isinstance(sizes, str):
        sizes = [int(x) for x in sizes.split(",") if x]
    return ExperimentConfig(
        instance=inst,
        schedulers=schedulers,
        sizes=sizes,
        out=str(pick("out", "results")),
        seed=seed,
        jobs=int(jobs),
        horizon=_parse_horizon(pick("horizon", DEFAULT_HORIZON)),
    )


def _int_list(value) -> list[int]:
    if isinstance(value, str):
        return [int(x) for x in value.split(",") if x.strip()]
    return [int(x) for x in value]


def build_instance(spec: dict, seed: int) -> tuple[Instance, str, dict]:
    """Instance, a file stem, and extra facts worth printing."""
    gen = spec.get("generator")
    try:
        if spec.get("trace"):
            M = spec.get("M")
            inst = load_trace(spec["trace"], None if M is None else int(M))
            return inst, Path(spec["trace"]).stem, {}
        if gen == "example1":
            return example1_instance(), "example1", {}
        if gen in ("adversarial_sf", "adversarial_sf2"):
            M = int(spec["M"])
            inst = gen_adversarial_sf(M) if gen == "adversarial_sf" else gen_adversarial_sf2(M)
            return inst, f"{gen}_M{M}", {}
        if gen == "3partition":
            xs, T = _int_list(spec["xs"]), int(spec["T"])
            m = len(xs) // 3
            return gen_3partition(xs, T), f"3partition_m{m}", {"optimal_tel_if_partition": three_partition_tel(m)}
        if gen == "partition":
            xs, T = _int_list(spec["xs"]), int(spec["T"])
            return gen_partition_makespan(xs, T), f"partition_n{len(xs)}", {}
        if gen in {k.value for k in DistributionKind}:
            params = {k: v for k, v in spec.items() if k not in ("generator", "n", "M", "seed")}
            dist = DistributionSpec.from_dict({"kind": gen, "seed": int(spec.get("seed", seed)), **params})
            n, M = int(spec["n"]), int(spec.get("M", 100))
            return gen_synthetic(dist, n, M), f"{gen}_n{n}_M{M}_seed{dist.seed}", {}
    except KeyError as exc:
        raise ConfigError(f"generator {gen!r} needs field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ConfigError(f"bad instance spec {spec}: {exc}") from None
    raise ConfigError(f"unknown generator {gen!r}")


def subsample(instance: Instance, n: int, seed: int) -> Instance:
    """n requests drawn without replacement (SplitMix64), original ids kept."""
    if n > instance.n:
        raise ConfigError(f"size {n} exceeds the instance size {instance.n}")
    if n == instance.n:
        return instance
    picked = SplitMix64(seed).sample(instance.n, n)
    return instance.subset(sorted(instance.requests[i].id for i in picked))


# --- run ----------------------------------------------------------------------


def _run_cell(instance: Instance, spec: SchedulerSpec, horizon) -> dict:
    if spec.kind.value in ("sorted_lp", "lp_swap") and spec.horizon_override is None:
        spec = SchedulerSpec(spec.kind, spec.selector, horizon, spec.label)
    start = time.perf_counter()
    schedule, _ = run_scheduler(instance, spec)
    wall_ms = (time.perf_counter() - start) * 1000.0
    m = compute_metrics(instance, schedule)
    return {
        "scheduler": spec.name,
        "n": instance.n,
        "tel": m.tel,
        "mean_latency": f"{m.mean_latency:.6f}",
        "makespan": m.makespan,
        "utilization": f"{m.mean_utilization:.6f}",
        "wall_ms": f"{wall_ms:.3f}",
    }


def _cell_or_error(args):
    instance, spec, horizon = args
    try:
        return _run_cell(instance, spec, horizon), None
    except Exception as exc:  # recorded per row; the run continues
        row = {c: "" for c in RESULT_COLUMNS}
        row.update(scheduler=spec.name, n=instance.n)
        return row, f"{spec.name} n={instance.n}: {type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig) -> tuple[list[dict], list[str]]:
    base, _, _ = build_instance(cfg.instance, cfg.seed)
    sizes = cfg.sizes or [base.n]
    cells = [(subsample(base, n, cfg.seed), spec, cfg.horizon) for n in sizes for spec in cfg.schedulers]
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_cell_or_error, cells))
    else:
        outcomes = [_cell_or_error(c) for c in cells]
    rows = sorted((row for row, _ in outcomes), key=lambda r: (r["scheduler"], int(r["n"])))
    errors = [err for _, err in outcomes if err]
    return rows, errors


def write_results(rows: list[dict], out: Path, stable: bool = False) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "results.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "wall_ms": "" if stable else row["wall_ms"]})
    # x = n, one mean-latency column per scheduler
    names = sorted({r["scheduler"] for r in rows})
    sizes = sorted({int(r["n"]) for r in rows})
    lookup = {(r["scheduler"], int(r["n"])): r["mean_latency"] for r in rows}
    with open(out / "series.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", *names])
        for n in sizes:
            writer.writerow([n, *(lookup.get((s, n), "") for s in names)])
    return path


def _sidecar_logger(out: Path) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def cmd_run(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out)
    handler = _sidecar_logger(out)
    try:
        log.info("run start: %d scheduler(s), sizes %s, seed %d, jobs %d", len(cfg.schedulers), cfg.sizes, cfg.seed, cfg.jobs)
        rows, errors = run_experiment(cfg)
        path = write_results(rows, out, stable=args.stable)
        for err in errors:
            log.error(err)
            print(f"error: {err}", file=sys.stderr)
        log.info("run done: %d row(s) -> %s", len(rows), path)
    finally:
        log.removeHandler(handler)
        handler.close()
    print(path)
    return EXIT_RUNTIME if errors else EXIT_OK


# --- generate -------------------------------------------------------------------


def cmd_generate(args) -> int:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    spec = dict(data.get("instance", {}))
    for name in ("generator", "n", "M", "trace", "xs", "T"):
        if getattr(args, name, None) is not None:
            spec[name] = getattr(args, name)
    if not spec:
        raise ConfigError("nothing to generate (use --generator or a config with 'instance')")
    seed = args.seed if args.seed is not None else int(data.get("seed", 0))
    inst, stem, facts = build_instance(spec, seed)
    out = Path(args.out if args.out is not None else data.get("out", "instances"))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.json"
    dump_instance(inst, path)
    print(path)
    for key, value in facts.items():
        print(f"{key}: {value}")
    return EXIT_OK


# --- compare --------------------------------------------------------------------


def read_results(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ConfigError(f"{path}: expected columns {','.join(RESULT_COLUMNS)}, got {reader.fieldnames}")
        return list(reader)


def compare_table(rows: list[dict], baseline: str) -> str:
    """Markdown table: one row per n, TEL per scheduler and TEL / baseline TEL."""
    tel: dict[tuple[str, int], int] = {}
    for r in rows:
        key = (r["scheduler"], int(r["n"]))
        if key in tel:
            raise ConfigError(f"duplicate result for scheduler {key[0]} at n={key[1]}")
        if r["tel"] == "":
            continue
        tel[key] = int(r["tel"])
    names = sorted({s for s, _ in tel})
    if baseline not in names:
        raise ConfigError(f"baseline {baseline!r} not among schedulers {names}")
    others = [s for s in names if s != baseline]
    header = ["n", *(f"tel {s}" for s in names), *(f"{s} / {baseline}" for s in others)]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for n in sorted({n for _, n in tel}):
        base = tel.get((baseline, n))
        cells = [str(n), *(str(tel.get((s, n), "")) for s in names)]
        for s in others:
            v = tel.get((s, n))
            cells.append(f"{v / base:.4f}" if v is not None and base else "")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    rows = []
    for p in args.results:
        try:
            rows.extend(read_results(Path(p)))
        except FileNotFoundError:
            raise ConfigError(f"results file not found: {p}") from None
    table = compare_table(rows, args.baseline)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


# --- verify ---------------------------------------------------------------------


def cmd_verify(args) -> int:
    names = list(SUITES) + ["safety"] if args.suite == "all" else [args.suite]
    failed = False
    for name in names:
        result = run_suite(name)
        failed |= not result.passed
        if args.json:
            print(json.dumps(result.to_dict(), default=str, sort_keys=True))
        else:
            print(result.line())
            for note in result.notes:
                print(f"  note: {note}")
    return EXIT_VERIFY if failed else EXIT_OK


# --- entry point ----------------------------------------------------------------


def _add_instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generator", help="uniform|normal|binomial|exponential|mixed|example1|adversarial_sf|adversarial_sf2|3partition|partition")
    p.add_argument("--n", type=int, help="number of requests (synthetic generators)")
    p.add_argument("--M", type=int, help="memory limit in tokens")
    p.add_argument("--trace", help="CSV (s,o) or JSON instance file")
    p.add_argument("--xs", help="comma-separated items for the reduction generators")
    p.add_argument("--T", type=int, help="target sum for the reduction generators")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvsched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an instance file")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory (default: instances)")
    _add_instance_flags(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run schedulers and write results.csv")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, help="parallel cells (default: $KVSCHED_JOBS or 1)")
    r.add_argument("--out", help="output directory (default: results)")
    r.add_argument("--scheduler", action="append", help="repeatable; e.g. mc_sf, sorted_f:local_swap, lp_swap")
    r.add_argument("--selector", help="default selector for sorted_f")
    r.add_argument("--epsilon", help="scaled DP accuracy, e.g. 1/10")
    r.add_argument("--horizon", help="LP horizon: integer or 'auto'")
    r.add_argument("--sizes", help="comma-separated subsample sizes")
    r.add_argument("--stable", action="store_true", help="leave wall_ms empty so reruns are byte-identical")
    _add_instance_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="markdown table of TELs and ratios")
    c.add_argument("results", nargs="+")
    c.add_argument("--baseline", required=True, help="scheduler name used as denominator")
    c.add_argument("--out", help="also write the table here")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("suite", choices=[*SUITES, "safety", "all"])
    v.add_argument("--json", action="store_true", help="one JSON object per suite")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

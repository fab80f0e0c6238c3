"""Command-line entry point for the experiment harness.

Subcommands:

    bias-sweep   bias vs step size for one algorithm (+ optional predicted line)
    compare      sampling error vs h for several algorithms, matched streams
    ratio        SVRG / mini-batch error ratio table R(p, h)
    coefficient  leading-order bias coefficient C0 with stderr
    select       closed-form step-size and algorithm selection
    reference    compute and save a target-mean reference fixture

Common flags: --config <json>, --seed <int> (overrides the config seed),
--out <path>, --workers <n> (speed only; outputs are worker-invariant).

Exit codes: 0 success, 2 configuration error, 3 divergence-dominated run
(more than half the replicas diverged in some cell).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import harness
from .harness import ConfigError, ExperimentSpec, emit_csv, load_config
from .observables import save_reference
from .potentials import model_from_id
from .variation import default_burnin_steps

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _spec_from_args(args) -> ExperimentSpec:
    spec = load_config(args.config)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return spec


def _out_path(args, spec) -> Path:
    out = args.out or spec.out
    if not out:
        raise ConfigError("no output path: pass --out or set 'out' in the config")
    return Path(out)


def _divergence_dominated(records) -> bool:
    return any(r.diverged > r.replicas for r in records
               if r.statistic in ("bias", "error"))


def _finish(records, path) -> int:
    emit_csv(records, path)
    print(f"wrote {len(records)} rows to {path}")
    return EXIT_DIVERGED if _divergence_dominated(records) else EXIT_OK


def _cmd_bias_sweep(args) -> int:
    spec = _spec_from_args(args)
    records = harness.run_bias_sweep(spec, workers=args.workers)
    return _finish(records, _out_path(args, spec))


def _cmd_compare(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict) or "algorithms" not in doc:
        raise ConfigError("compare config must be an object with an 'algorithms' list")
    algorithms = doc.pop("algorithms")
    base = dict(doc)
    specs = []
    for algo in algorithms:
        d = dict(base)
        d["algorithm"] = algo
        unknown = sorted(set(d) - {f.name for f in dataclasses.fields(ExperimentSpec)})
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r} in {args.config}")
        d["h_grid"] = tuple(d["h_grid"])
        specs.append(ExperimentSpec(**d))
    if args.seed is not None:
        specs = [dataclasses.replace(s, seed=args.seed) for s in specs]
    records = harness.run_compare(specs, workers=args.workers)
    return _finish(records, _out_path(args, specs[0]))


def _cmd_ratio(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    allowed = {"model", "p_list", "h_grid", "total_time", "replicas", "seed",
               "reference", "out", "burnin_time"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r} in {args.config}")
    missing = [k for k in ("model", "p_list", "h_grid", "total_time",
                           "replicas", "seed", "reference") if k not in doc]
    if missing:
        raise ConfigError(f"ratio config missing required key {missing[0]!r}")
    seed = args.seed if args.seed is not None else doc["seed"]
    records = harness.run_ratio_table(
        doc["model"], doc["p_list"], [float(h) for h in doc["h_grid"]],
        float(doc["total_time"]), int(doc["replicas"]), int(seed),
        doc["reference"], workers=args.workers,
        burnin_time=float(doc.get("burnin_time", 0.0)))
    out = args.out or doc.get("out")
    if not out:
        raise ConfigError("no output path: pass --out or set 'out' in the config")
    return _finish(records, Path(out))


def _cmd_coefficient(args) -> int:
    spec = _spec_from_args(args)
    records = harness.run_coefficient(spec)
    path = _out_path(args, spec)
    emit_csv(records, path)
    coeff = next(r for r in records if r.statistic == "coefficient")
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    model, _ = model_from_id(spec.model, spec.seed)
    sidecar.write_text(json.dumps({
        "coefficient": coeff.value,
        "stderr": coeff.stderr,
        "replicas": coeff.replicas,
        "h": coeff.h,
        "burnin_steps": default_burnin_steps(model, coeff.h),
        "seed": spec.seed,
        "model": spec.model,
    }, indent=2) + "\n")
    print(f"wrote {len(records)} rows to {path} (+ {sidecar.name})")
    return EXIT_OK


def _cmd_select(args) -> int:
    sel = harness.select_algorithm(args.epsilon, args.dim, args.components, args.batch)
    doc = {
        "h": sel.h,
        "total_time": sel.total_time,
        "steps": sel.steps,
        "choice": sel.choice,
        "svrg_window": list(sel.svrg_window),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_reference(args) -> int:
    spec = _spec_from_args(args)
    model, fn = model_from_id(spec.model, spec.seed)
    ref = harness.resolve_reference(model, fn, spec.reference, spec.seed)
    path = _out_path(args, spec)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_reference(ref, path)
    print(f"reference {ref.value} +- {ref.error_bound} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubu-sampler",
        description="UBU-integrator sampling experiments (bias, MSE, "
                    "variance reduction, leading-order coefficients)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--workers", type=int, default=1,
                       help="worker threads (speed only; results identical)")

    p = sub.add_parser("bias-sweep", help="bias vs step size for one algorithm")
    common(p)
    p.set_defaults(func=_cmd_bias_sweep)

    p = sub.add_parser("compare", help="sampling error vs h across algorithms")
    common(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("ratio", help="SVRG / mini-batch error ratio table")
    common(p)
    p.set_defaults(func=_cmd_ratio)

    p = sub.add_parser("coefficient", help="leading-order bias coefficient")
    common(p)
    p.set_defaults(func=_cmd_coefficient)

    p = sub.add_parser("select", help="step-size and algorithm selection")
    p.add_argument("--epsilon", type=float, required=True,
                   help="target root mean square error")
    p.add_argument("--dim", type=int, required=True, help="dimension d")
    p.add_argument("--components", type=int, required=True, help="component count N")
    p.add_argument("--batch", type=int, required=True, help="batch size p")
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("reference", help="compute and save a reference fixture")
    common(p)
    p.set_defaults(func=_cmd_reference)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

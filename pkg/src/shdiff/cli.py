"""Command-line interface: tree building, planning, simulation, tau sweeps.

Every subcommand is a pure function of its input files, flags, and seed;
repeated invocations produce byte-identical artifacts.  Output files are
written atomically (temp file + rename).  Exit codes: 0 success, 2 usage or
configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import diffusion, metrics, planner, tree as tree_mod
from .embeddings import generate_synthetic, load_prompt_set, save_prompt_set
from .errors import DataError, UsageError


def _atomic_write(path: str, data: str | bytes) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".shdiff-tmp-")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_input(path: str) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _load_prompts(args) -> "tuple":
    _require_input(args.input)
    try:
        prompts = load_prompt_set(args.input)
    except OSError as e:
        raise DataError(f"cannot read {args.input}: {e}") from e
    if getattr(args, "normalize", False):
        prompts = prompts.normalized()
    return prompts


def _build_or_load_tree(args, prompts):
    """Reuse a cached tree JSON when its recorded input hash still matches."""
    cached = getattr(args, "tree", None)
    if cached and os.path.isfile(cached):
        with open(cached, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"malformed tree JSON in {cached}: {e}") from e
        if doc.get("input_sha256") == _file_sha256(args.input):
            return tree_mod.tree_from_json(text)
        print(f"warning: {cached} does not match input, rebuilding", file=sys.stderr)
    return tree_mod.build_tree(prompts)


def cmd_tree(args) -> int:
    prompts = _load_prompts(args)
    ablation = args.ablation == "random-encodings"
    seed = args.seed if args.seed is not None else 0
    if ablation:
        built_from = tree_mod.randomize_encodings(prompts, seed)
    else:
        built_from = prompts
    tree = tree_mod.build_tree(built_from)
    extra = {"input_sha256": _file_sha256(args.input), "ablation": ablation}
    if args.output:
        _atomic_write(args.output, tree_mod.tree_to_json(tree, extra))
    label = " (ablation: random encodings)" if ablation else ""
    print(f"N: {len(prompts)}{label}")
    print(f"depth: {tree.depth()}")
    print(f"c_max: {tree.c_max}")
    print(f"inversion_count: {tree.inversion_count}")
    return 0


def cmd_plan(args) -> int:
    prompts = _load_prompts(args)
    tree = _build_or_load_tree(args, prompts)
    params = planner.ScheduleParams(K=args.k, tau=args.tau, phi_variant=args.phi)
    ablation_tree = None
    if args.ablation == "random-encodings":
        seed = args.seed if args.seed is not None else 0
        ablation_tree = tree_mod.build_tree(tree_mod.randomize_encodings(prompts, seed))
    plan = planner.compile_plan(tree, params, ablation_tree=ablation_tree)
    if args.output:
        _atomic_write(args.output, planner.plan_to_json(plan))
    print(f"savings: {plan.savings_fraction * 100:.2f}%")
    return 0


def _resolve_world(args, prompts):
    d = prompts.dimension
    if args.world:
        _require_input(args.world)
        with open(args.world, "r", encoding="utf-8") as f:
            world, schedule, seed = diffusion.world_from_json(f.read(), d)
        if args.seed is not None:
            seed = args.seed
        if args.k is not None or args.schedule is not None or args.variant is not None:
            schedule = diffusion.make_schedule(
                args.k if args.k is not None else schedule.K,
                args.variant if args.variant is not None else schedule.variant,
                args.schedule if args.schedule is not None else schedule.curve,
            )
        return world, schedule, seed
    world = diffusion.ToyWorld.create(d, d, args.target_std)
    schedule = diffusion.make_schedule(
        args.k if args.k is not None else 40,
        args.variant if args.variant is not None else diffusion.DETERMINISTIC,
        args.schedule if args.schedule is not None else diffusion.CURVE_COSINE,
    )
    return world, schedule, args.seed if args.seed is not None else 0


def cmd_simulate(args) -> int:
    prompts = _load_prompts(args)
    world, schedule, seed = _resolve_world(args, prompts)
    tree = _build_or_load_tree(args, prompts)
    params = planner.ScheduleParams(K=schedule.K, tau=args.tau, phi_variant=args.phi)
    ablation_tree = None
    exec_tree = None
    if args.ablation == "random-encodings":
        ablation_tree = tree_mod.build_tree(tree_mod.randomize_encodings(prompts, seed))
        exec_tree = tree_mod.reembed(ablation_tree, prompts)
    plan, result, run_metrics = metrics.run_once(
        prompts, tree, world, schedule, params, seed,
        ablation_tree=ablation_tree, exec_tree=exec_tree,
    )
    lines = []
    for pid in prompts.ids:
        out = result.outputs[pid]
        lines.append(json.dumps({
            "id": pid,
            "sample": [float(np.float32(v)) for v in out.sample],
            "trace": [[node, k] for node, k in out.trace],
        }))
    _atomic_write(args.output, "\n".join(lines) + "\n")
    mpath = args.metrics or (os.path.splitext(args.output)[0] + ".metrics.json")
    _atomic_write(mpath, metrics.metrics_to_json(run_metrics, schedule.K, len(prompts), args.tau))
    print(f"savings: {plan.savings_fraction * 100:.2f}%")
    print(f"quality_mse: {run_metrics.mean_squared_error_to_target:.6g}")
    return 0


def cmd_sweep(args) -> int:
    prompts = _load_prompts(args)
    world, schedule, seed = _resolve_world(args, prompts)
    try:
        taus = [float(v) for v in args.sweep.split(",") if v.strip() != ""]
    except ValueError as e:
        raise UsageError(f"bad --sweep list: {e}") from e
    if not taus:
        raise UsageError("--sweep needs at least one tau value")
    rows = metrics.sweep_tau(prompts, world, schedule, taus, seed, phi_variant=args.phi)
    csv_text = metrics.sweep_csv(rows, schedule.K, len(prompts))
    if args.output:
        _atomic_write(args.output, csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def cmd_synth(args) -> int:
    prompts = generate_synthetic(args.clusters, args.per_cluster, args.dim,
                                 args.jitter, args.seed)
    fmt = "binary" if args.output.endswith(".bin") else "jsonl"
    save_prompt_set(prompts, args.output, fmt)
    print(f"wrote {len(prompts)} embeddings (d={prompts.dimension}) to {args.output}")
    return 0


def _add_common(p, with_tau=True):
    p.add_argument("--input", required=True, help="prompt set (JSONL or SHDF binary)")
    p.add_argument("--output", help="output artifact path")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--normalize", action="store_true",
                   help="L2-normalize embeddings on ingestion")
    p.add_argument("--ablation", choices=["random-encodings"], default=None)
    if with_tau:
        p.add_argument("--tau", type=float, default=1.0)
        p.add_argument("--phi", choices=["main", "appendix"], default="main")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shdiff",
                                     description="Shared-step diffusion planner and simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tree", help="build the embedding tree")
    _add_common(p, with_tau=False)

    p = sub.add_parser("plan", help="compile a shared-step plan")
    _add_common(p)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--tree", help="cached tree JSON (reused if input hash matches)")

    p = sub.add_parser("simulate", help="execute a plan against the toy world")
    _add_common(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--tree", help="cached tree JSON")
    p.add_argument("--world", help="world config JSON")
    p.add_argument("--schedule", choices=["cosine", "linear-beta"], default=None)
    p.add_argument("--variant", choices=["deterministic", "ancestral"], default=None)
    p.add_argument("--target-std", type=float, default=1.0)
    p.add_argument("--metrics", help="metrics JSON path")

    p = sub.add_parser("sweep", help="run a tau sweep and emit CSV")
    _add_common(p, with_tau=False)
    p.add_argument("--phi", choices=["main", "appendix"], default="main")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--world", help="world config JSON")
    p.add_argument("--schedule", choices=["cosine", "linear-beta"], default=None)
    p.add_argument("--variant", choices=["deterministic", "ancestral"], default=None)
    p.add_argument("--target-std", type=float, default=1.0)
    p.add_argument("--sweep", required=True, help="comma-separated tau values")

    p = sub.add_parser("synth", help="generate a synthetic prompt set")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    return parser


_COMMANDS = {
    "tree": cmd_tree,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        args.output = args.output or "samples.jsonl"
    if getattr(args, "schedule", None) == "linear-beta":
        args.schedule = diffusion.CURVE_LINEAR_BETA
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

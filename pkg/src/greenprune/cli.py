"""Command-line entry points.

Exit codes: 0 on success, 2 on configuration or usage errors, 3 on runtime
failures. All randomness is governed by explicit seeds.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .archspec import ArchError, load_arch, infer_shapes, serialize_arch
from .energy import EnergyConstants, network_energy, selection_probs
from .harness import (
    ConfigError,
    ExperimentConfig,
    load_config,
    report,
    run_epsilon_sweep,
    run_threshold_sweep,
)
from .pruner import PruningConfig, prune_at_init, summarize
from .synthdata import SyntheticConfig, generate, save_dataset


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenprune",
        description="Energy-driven filter pruning at initialization with "
        "uncertainty-routed hybrid inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-energy", help="per-layer analytical energy table")
    p.add_argument("--arch", required=True, help="architecture file (.arch text or .json)")
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--a-per-flop", type=float, default=2.3e-12, help="joules per FLOP")
    p.add_argument("--b-per-mb", type=float, default=640e-12, help="joules per MB of DRAM access")
    p.add_argument("--bytes-per-value", type=int, default=4)

    p = sub.add_parser("prune", help="energy-driven stochastic filter pruning at initialization")
    p.add_argument("--arch", required=True)
    p.add_argument("--epsilon", type=float, required=True, help="fraction of prunable filters in (0,1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-filters", type=int, default=1)
    p.add_argument("--out", required=True, help="output path for the pruned architecture")
    p.add_argument("--plan", help="CSV path for the removal plan")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--hard-fraction", type=float, default=0.2)
    p.add_argument("--blur-radius", type=int, default=2)
    p.add_argument("--occluder-prob", type=float, default=0.9)
    p.add_argument("--clover-bias", type=float, default=3.0)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--png", action="store_true", help="write PNG images instead of npy tensors")

    p = sub.add_parser("train", help="run the compression-level experiment grid")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--arch", help="architecture file (overrides config)")
    p.add_argument("--out", dest="out_dir", help="output directory (overrides config)")
    p.add_argument("--data", dest="data_dir", help="pre-generated dataset directory")
    p.add_argument("--epsilons", type=_float_list, help="comma-separated percents, e.g. 20,80")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--min-filters", type=int)
    p.add_argument("--lr-baseline", type=float)
    p.add_argument("--lr-pruned", type=float)

    p = sub.add_parser("sweep", help="threshold sweep over a pruned/unpruned model pair")
    p.add_argument("--pruned", required=True, help="pruned model checkpoint")
    p.add_argument("--unpruned", required=True, help="unpruned model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory to evaluate")
    p.add_argument("--taus", type=_float_list, help="ascending thresholds; defaults to spread quantiles")
    p.add_argument("--csv", required=True)
    p.add_argument("--svg", help="optional dual-axis chart")

    p = sub.add_parser("report", help="collate result CSVs into a markdown summary")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", help="write the summary here as well as stdout")

    return parser


def cmd_analyze_energy(args) -> int:
    arch = infer_shapes(load_arch(args.arch))
    constants = EnergyConstants(
        a_per_flop=args.a_per_flop,
        b_per_mb=args.b_per_mb,
        bytes_per_value=args.bytes_per_value,
    )
    rep = network_energy(arch, constants)
    prunable = {l.id for l in arch.layers if l.prunable}
    probs = selection_probs(arch, constants, prunable) if prunable else {}

    header = ["layer_id", "kind", "flops", "e_flops_j", "mem_bytes", "e_access_j", "e_total_j", "p_k"]
    rows = []
    for layer, le in zip(arch.layers, rep.per_layer):
        rows.append(
            [layer.id, layer.kind, le.flops, le.e_flops, le.mem_bytes, le.e_access,
             le.e_total, probs.get(layer.id, 0.0)]
        )
    widths = [9, 13, 10, 12, 10, 12, 12, 8]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        cells = [
            str(row[0]), row[1], str(row[2]), f"{row[3]:.4e}", str(row[4]),
            f"{row[5]:.4e}", f"{row[6]:.4e}", f"{row[7]:.4f}",
        ]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    print(f"network total: {rep.network_total:.6e} J")

    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([row[0], row[1], row[2], repr(row[3]), row[4],
                                 repr(row[5]), repr(row[6]), repr(row[7])])
    return 0


def cmd_prune(args) -> int:
    arch = infer_shapes(load_arch(args.arch))
    config = PruningConfig(epsilon=args.epsilon, min_filters=args.min_filters, seed=args.seed)
    pruned, plan = prune_at_init(arch, config)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(serialize_arch(pruned))
    if args.plan:
        with open(args.plan, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "layer_id", "filter_index"])
            writer.writerows(plan.removals)
    for row in summarize(plan, arch):
        print(
            f"layer {row['layer_id']}: removed {row['removed']}/{row['original_filters']} "
            f"filters ({row['removed_pct']:.1f}%)"
        )
    print(f"pruned architecture written to {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    config = SyntheticConfig(
        n_samples=args.n,
        image_size=args.image_size,
        hard_fraction=args.hard_fraction,
        blur_radius=args.blur_radius,
        occluder_probability=args.occluder_prob,
        clover_bias=args.clover_bias,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    dataset = generate(config)
    save_dataset(dataset, args.out, png=args.png)
    n_hard = int((dataset.strata == "hard").sum())
    print(f"wrote {len(dataset)} samples ({n_hard} hard) to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "arch": args.arch,
        "out_dir": args.out_dir,
        "data_dir": args.data_dir,
        "epsilons": args.epsilons,
        "runs": args.runs,
        "seed": args.seed,
        "epochs": args.epochs,
        "n_samples": args.n_samples,
        "min_filters": args.min_filters,
        "lr_baseline": args.lr_baseline,
        "lr_pruned": args.lr_pruned,
    }
    if args.config:
        config = load_config(args.config, overrides)
    else:
        provided = {k: v for k, v in overrides.items() if v is not None}
        if "arch" not in provided or "out_dir" not in provided:
            raise ConfigError("--arch and --out are required when no --config is given")
        try:
            config = ExperimentConfig(**provided)
        except TypeError as e:
            raise ConfigError(str(e)) from None
    records = run_epsilon_sweep(config)
    print(f"completed {len(records)} runs; results in {config.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    result = run_threshold_sweep(
        pruned_ckpt=args.pruned,
        unpruned_ckpt=args.unpruned,
        data_dir=args.data,
        csv_path=args.csv,
        taus=args.taus,
        svg_path=args.svg,
    )
    print(f"wrote {len(result.rows)} sweep rows to {args.csv}")
    return 0


def cmd_report(args) -> int:
    text = report(args.dir, args.out)
    print(text, end="")
    return 0


COMMANDS = {
    "analyze-energy": cmd_analyze_energy,
    "prune": cmd_prune,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArchError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Experiment orchestration: compression sweeps, threshold sweeps, and reports.

Every intermediate artifact is a file under the output directory (seed
manifest, per-run checkpoints and metrics, raw and summary CSVs), so runs can
crash-resume and every reported statistic is recomputable from the persisted
per-run data. One base seed fully determines the experiment.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .archspec import NetworkArch, infer_shapes, load_arch
from .energy import EnergyConstants, network_energy
from .hybrid import (
    SweepResult,
    cache_predictions,
    default_tau_grid,
    rmse,
    rmse_by_stratum,
    sweep_from_cache,
)
from .nn import TrainConfig, build_from_arch, load_model, predict_batch, save_model, train
from .pruner import PruningConfig, prune_at_init
from .synthdata import Dataset, SyntheticConfig, generate, load_dataset, save_dataset, split


class ConfigError(ValueError):
    """Invalid experiment configuration or config file."""


@dataclass
class ExperimentConfig:
    arch: str
    out_dir: str
    data_dir: str | None = None
    epsilons: list[float] = field(default_factory=lambda: [20.0, 40.0, 60.0, 80.0, 90.0])
    runs: int = 5
    taus: list[float] | None = None
    seed: int = 0
    # dataset
    n_samples: int = 2000
    hard_fraction: float = 0.2
    image_size: int = 32
    train_frac: float = 0.8
    blur_radius: int = 2
    occluder_probability: float = 0.9
    clover_bias: float = 3.0
    noise_sigma: float = 0.05
    # training
    category_count: int = 3
    epochs: int = 100
    batch_size: int = 32
    lr_baseline: float = 0.01
    lr_pruned: float = 0.0003
    momentum: float = 0.9
    min_filters: int = 1
    max_grad_norm: float | None = 5.0

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        for eps in self.epsilons:
            if not (0.0 < eps < 100.0):
                raise ConfigError(f"epsilons must be in (0, 100) percent, got {eps}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON document plus flag overrides."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**doc)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def run_seeds(base: int, eps_index: int, run: int) -> dict[str, int]:
    """Deterministic per-run seed derivation, recorded in the manifest."""
    root = base * 1_000_000 + eps_index * 1_000 + run * 10
    return {"prune": root + 1, "init": root + 2, "train": root + 3}


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _evaluate(model, test_ds: Dataset) -> dict:
    mu, _ = predict_batch(model, test_ds.images)
    by_stratum = rmse_by_stratum(mu, test_ds.targets, test_ds.strata)
    return {
        "rmse_overall": rmse(mu, test_ds.targets),
        "rmse_easy": by_stratum.get("easy", float("nan")),
        "rmse_hard": by_stratum.get("hard", float("nan")),
    }


def prepare_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Load or generate the dataset, persist the split under the output dir."""
    out = Path(config.out_dir)
    train_dir, test_dir = out / "data" / "train", out / "data" / "test"
    if (train_dir / "labels.csv").exists() and (test_dir / "labels.csv").exists():
        return load_dataset(str(train_dir)), load_dataset(str(test_dir))
    if config.data_dir is not None:
        full = load_dataset(config.data_dir)
    else:
        full = generate(
            SyntheticConfig(
                n_samples=config.n_samples,
                image_size=config.image_size,
                hard_fraction=config.hard_fraction,
                blur_radius=config.blur_radius,
                occluder_probability=config.occluder_probability,
                clover_bias=config.clover_bias,
                noise_sigma=config.noise_sigma,
                seed=config.seed,
            )
        )
    train_ds, test_ds = split(full, config.train_frac, seed=config.seed + 1)
    save_dataset(train_ds, str(train_dir))
    save_dataset(test_ds, str(test_dir))
    return train_ds, test_ds


def _train_one(
    config: ExperimentConfig,
    arch: NetworkArch,
    train_ds: Dataset,
    epsilon: float,
    seeds: dict[str, int],
):
    """Build (pruning if epsilon > 0), train, and return (model, energy report)."""
    if epsilon > 0:
        pruning = PruningConfig(
            epsilon=epsilon / 100.0, min_filters=config.min_filters, seed=seeds["prune"]
        )
        model_arch, _ = prune_at_init(arch, pruning)
        loss_kind, lr = "uncert", config.lr_pruned
    else:
        model_arch = arch
        loss_kind, lr = "rmse", config.lr_baseline
    model = build_from_arch(
        model_arch,
        config.category_count,
        seed=seeds["init"],
        mu_bias_init=100.0 / config.category_count,
    )
    train_cfg = TrainConfig(
        epochs=config.epochs,
        learning_rate=lr,
        momentum=config.momentum,
        batch_size=config.batch_size,
        loss_kind=loss_kind,
        max_grad_norm=config.max_grad_norm,
        seed=seeds["train"],
    )
    model, history = train(model, train_ds, train_cfg)
    return model, history


RAW_HEADER = [
    "epsilon", "run", "prune_seed", "init_seed", "train_seed",
    "energy_j", "rmse_overall", "rmse_easy", "rmse_hard", "final_train_loss",
]

SUMMARY_HEADER = [
    "epsilon", "runs",
    "energy_j_mean", "energy_j_std",
    "rmse_overall_mean", "rmse_overall_std",
    "rmse_easy_mean", "rmse_easy_std",
    "rmse_hard_mean", "rmse_hard_std",
]


def run_epsilon_sweep(config: ExperimentConfig) -> list[dict]:
    """Train `runs` models per compression level (plus the unpruned baseline)
    and emit raw and mean +- std CSVs; completed runs are skipped on re-entry."""
    out = Path(config.out_dir)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)

    arch = infer_shapes(load_arch(config.arch))
    train_ds, test_ds = prepare_data(config)

    levels = [0.0] + [float(e) for e in config.epsilons]
    manifest = {
        "config": asdict(config),
        "runs": [
            {"epsilon": eps, "run": r, **run_seeds(config.seed, i, r)}
            for i, eps in enumerate(levels)
            for r in range(config.runs)
        ],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    records: list[dict] = []
    for i, eps in enumerate(levels):
        for r in range(config.runs):
            seeds = run_seeds(config.seed, i, r)
            tag = f"eps{eps:g}_run{r}"
            metrics_path = runs_dir / f"{tag}.json"
            ckpt_path = runs_dir / f"{tag}.npz"
            if metrics_path.exists():
                with open(metrics_path, "r", encoding="utf-8") as f:
                    records.append(json.load(f))
                continue
            model, history = _train_one(config, arch, train_ds, eps, seeds)
            record = {
                "epsilon": eps,
                "run": r,
                **{f"{k}_seed": v for k, v in seeds.items()},
                "energy_j": network_energy(model.arch).network_total,
                **_evaluate(model, test_ds),
                "final_train_loss": history[-1]["loss"],
            }
            save_model(model, str(ckpt_path))
            with open(metrics_path, "w", encoding="utf-8") as f:
                json.dump(record, f, indent=2, sort_keys=True)
            records.append(record)
            # flush partial results after every completed run
            _write_epsilon_csvs(out, records)
    _write_epsilon_csvs(out, records)
    return records


def _write_epsilon_csvs(out: Path, records: list[dict]) -> None:
    records = sorted(records, key=lambda rec: (rec["epsilon"], rec["run"]))
    _write_csv(
        out / "epsilon_raw.csv",
        RAW_HEADER,
        [[rec[k] for k in RAW_HEADER] for rec in records],
    )
    summary_rows = []
    for eps in sorted({rec["epsilon"] for rec in records}):
        level = [rec for rec in records if rec["epsilon"] == eps]
        row: list = [eps, len(level)]
        for metric in ("energy_j", "rmse_overall", "rmse_easy", "rmse_hard"):
            values = np.array([rec[metric] for rec in level], dtype=np.float64)
            row.append(float(values.mean()))
            row.append(float(values.std(ddof=1)) if len(values) > 1 else 0.0)
        summary_rows.append(row)
    _write_csv(out / "epsilon_summary.csv", SUMMARY_HEADER, summary_rows)


SWEEP_HEADER = [
    "tau", "n_reinferred", "n_reinferred_easy", "n_reinferred_hard",
    "energy_j", "energy_saving_pct", "rmse_overall", "rmse_easy", "rmse_hard",
]


def run_threshold_sweep(
    pruned_ckpt: str,
    unpruned_ckpt: str,
    data_dir: str,
    csv_path: str,
    taus: list[float] | None = None,
    svg_path: str | None = None,
    constants: EnergyConstants | None = None,
) -> SweepResult:
    """Sweep routing thresholds over a dataset directory and write the CSV.

    The tau grid defaults to the observed spread quantiles bracketed by the
    endpoint sentinels 0 (re-infer everything: unpruned accuracy) and +inf
    (pruned only), which double as the reference rows.
    """
    pruned = load_model(pruned_ckpt)
    unpruned = load_model(unpruned_ckpt)
    dataset = load_dataset(data_dir)
    if len(dataset) == 0:
        raise ConfigError(f"dataset at {data_dir} is empty")
    constants = constants or EnergyConstants()
    e_pruned = network_energy(pruned.arch, constants).network_total
    e_unpruned = network_energy(unpruned.arch, constants).network_total

    cache = cache_predictions(pruned, unpruned, dataset)
    if taus is None:
        taus = default_tau_grid(cache.sigma_agg)
    result = sweep_from_cache(cache, taus, e_pruned, e_unpruned)

    rows = []
    for row in result.rows:
        rows.append(
            [
                row.tau,
                row.reinferred_count,
                row.reinferred_by_stratum.get("easy", 0),
                row.reinferred_by_stratum.get("hard", 0),
                row.total_energy,
                100.0 * row.energy_saving_vs_unpruned,
                row.rmse,
                row.rmse_by_stratum.get("easy", float("nan")),
                row.rmse_by_stratum.get("hard", float("nan")),
            ]
        )
    _write_csv(Path(csv_path), SWEEP_HEADER, rows)
    if svg_path is not None:
        _plot_sweep(result, svg_path)
    return result


def _plot_sweep(result: SweepResult, svg_path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    interior = [r for r in result.rows if math.isfinite(r.tau) and r.tau > 0]
    if not interior:
        interior = list(result.rows)
    taus = [r.tau for r in interior]
    savings = [100.0 * r.energy_saving_vs_unpruned for r in interior]
    rmses = [r.rmse for r in interior]
    pruned_only = next((r for r in result.rows if math.isinf(r.tau)), None)
    unpruned_only = next((r for r in result.rows if r.tau == 0.0), None)

    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax2 = ax1.twinx()
    ax1.plot(taus, savings, "o-", color="tab:green", label="energy saving")
    ax2.plot(taus, rmses, "s-", color="tab:red", label="RMSE")
    if pruned_only is not None:
        ax2.axhline(pruned_only.rmse, color="tab:red", ls=":", lw=1, label="pruned-only RMSE")
    if unpruned_only is not None:
        ax2.axhline(unpruned_only.rmse, color="tab:gray", ls="--", lw=1, label="unpruned RMSE")
    ax1.set_xlabel("threshold tau on aggregated spread")
    ax1.set_ylabel("energy saving vs unpruned (%)", color="tab:green")
    ax2.set_ylabel("RMSE", color="tab:red")
    lines1, labels1 = ax1.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax1.legend(lines1 + lines2, labels1 + labels2, loc="center right", fontsize=8)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def _read_csv(path: Path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _knee_row(rows: list[dict]) -> dict | None:
    """Distance-to-utopia heuristic over interior sweep rows (our own rule,
    not a published selection procedure)."""
    interior = [
        r
        for r in rows
        if math.isfinite(float(r["tau"])) and float(r["tau"]) > 0.0
    ]
    if len(interior) < 2:
        return None
    savings = np.array([float(r["energy_saving_pct"]) for r in interior])
    rmses = np.array([float(r["rmse_overall"]) for r in interior])
    s_span = savings.max() - savings.min() or 1.0
    r_span = rmses.max() - rmses.min() or 1.0
    score = ((savings.max() - savings) / s_span) ** 2 + ((rmses - rmses.min()) / r_span) ** 2
    return interior[int(np.argmin(score))]


def report(results_dir: str, out_path: str | None = None) -> str:
    """Collate persisted CSVs into a deterministic markdown summary."""
    root = Path(results_dir)
    sections = []

    summary = root / "epsilon_summary.csv"
    if summary.exists():
        rows = _read_csv(summary)
        lines = [
            "## Compression sweep (mean +- std over runs)",
            "",
            "| epsilon % | runs | energy (J) | RMSE overall | RMSE easy | RMSE hard |",
            "|---|---|---|---|---|---|",
        ]
        for r in sorted(rows, key=lambda r: float(r["epsilon"])):
            lines.append(
                "| {eps:g} | {runs} | {em:.3e} +- {es:.1e} | {rm:.2f} +- {rs:.2f} "
                "| {re:.2f} +- {ree:.2f} | {rh:.2f} +- {rhe:.2f} |".format(
                    eps=float(r["epsilon"]),
                    runs=r["runs"],
                    em=float(r["energy_j_mean"]),
                    es=float(r["energy_j_std"]),
                    rm=float(r["rmse_overall_mean"]),
                    rs=float(r["rmse_overall_std"]),
                    re=float(r["rmse_easy_mean"]),
                    ree=float(r["rmse_easy_std"]),
                    rh=float(r["rmse_hard_mean"]),
                    rhe=float(r["rmse_hard_std"]),
                )
            )
        sections.append("\n".join(lines))

    for sweep_csv in sorted(root.glob("**/sweep*.csv")):
        rows = _read_csv(sweep_csv)
        if not rows:
            continue
        lines = [
            f"## Threshold sweep ({sweep_csv.relative_to(root)})",
            "",
            "| tau | re-inferred (easy/hard) | energy (J) | saving % | RMSE | RMSE easy | RMSE hard |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in rows:
            tau = float(r["tau"])
            lines.append(
                "| {tau} | {n} ({ne}/{nh}) | {e:.3e} | {s:.1f} | {rm:.2f} | {re:.2f} | {rh:.2f} |".format(
                    tau="inf" if math.isinf(tau) else f"{tau:.4g}",
                    n=r["n_reinferred"],
                    ne=r["n_reinferred_easy"],
                    nh=r["n_reinferred_hard"],
                    e=float(r["energy_j"]),
                    s=float(r["energy_saving_pct"]),
                    rm=float(r["rmse_overall"]),
                    re=float(r["rmse_easy"]),
                    rh=float(r["rmse_hard"]),
                )
            )
        knee = _knee_row(rows)
        if knee is not None:
            lines.append("")
            lines.append(
                f"Knee point (our distance-to-utopia heuristic, no published rule): "
                f"tau = {float(knee['tau']):.4g}, saving {float(knee['energy_saving_pct']):.1f}%, "
                f"RMSE {float(knee['rmse_overall']):.2f}."
            )
        sections.append("\n".join(lines))

    if not sections:
        text = "# Results\n\nno results found in " + str(root) + "\n"
    else:
        text = "# Results\n\n" + "\n\n".join(sections) + "\n"
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(text)
    return text

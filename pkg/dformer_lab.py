import logging
import time
from contextlib import contextmanager
from dataclasses import replace
from enum import Enum
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from tabulate import tabulate

from app import settings
from app.db.session import recent_runs, record_run
from app.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    ParameterError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
)
from app.kernel.tensor import NARROW, WIDE
from app.services.backbone import ARMS, ModelConfig, count_params, estimate_flops
from app.services.bench import parse_grid, run_bench
from app.services.checkpoint import load_model
from app.services.geo_attention import AttentionMode
from app.services.loader import build_synthetic_split, load_dataset, write_dataset
from app.services.manifest import RunManifest
from app.services.metrics import format_iou, miou, pixel_accuracy
from app.services.prior_viz import generate_prior_heatmaps
from app.services.property_suites import FAULTS, SUITE_NAMES, run_suites
from app.services.trainer import TrainConfig, evaluate, run_ablation, train_toy
from app.services.validators import read_config_file, safe_get, split_config

# Configure logging - WARNING by default to hide debug logs
logging.basicConfig(level=settings.LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# Initialize Typer app and Rich console
app = typer.Typer()
console = Console()

EXIT_FAILURE = 1
EXIT_USAGE = 2
DEFAULT_CONFIG = Path("configs") / "nano.cfg"

USAGE_ERRORS = (
    ConfigError, DataError, CheckpointError, ParameterError, UsageError,
    ShapeError, DimensionError, DomainError, OSError,
)


class Suite(str, Enum):
    KERNEL = "kernel"
    PRIORS = "priors"
    ATTENTION = "attention"
    GRADIENTS = "gradients"
    ALL = "all"


class BenchMode(str, Enum):
    FULL = "full"
    AXIAL = "axial"
    BOTH = "both"


Arm = Enum("Arm", {name.upper().replace("-", "_"): name for name in ARMS}, type=str)


def lab_banner():
    """Display the DFormer Lab banner."""
    console.print(Panel("[bold cyan]🧠 DFormer Lab[/bold cyan]\n[green]Geometry priors, geometry self-attention and toy RGB-D segmentation[/green]", expand=False))


def list_commands():
    """Display available commands in a table format."""
    table = Table(title="Available Commands", show_header=True, header_style="bold cyan")
    table.add_column("Command", style="bright_blue")
    table.add_column("Description", style="green")

    table.add_row("gen-prior", "🗺️ Write D, S, G and decay-row heatmaps for a 16-bit depth map.")
    table.add_row("check", "🔍 Run the kernel, prior, attention and gradient property suites.")
    table.add_row("bench", "⏱️ Compare full and axial attention: analytic FLOPs and median wall time.")
    table.add_row("model-info", "📐 Parameter and FLOP accounting for a model config.")
    table.add_row("gen-data", "🎨 Generate a synthetic RGB-D segmentation dataset.")
    table.add_row("train-toy", "🏋️ Train one ablation arm on synthetic scenes and report mIoU.")
    table.add_row("ablate", "🧪 Train several arms over several seeds and compare median mIoU.")
    table.add_row("eval", "📊 Evaluate a checkpoint on a dataset manifest.")
    table.add_row("runs", "📋 List recent runs from the run ledger.")

    console.print(table)


@contextmanager
def command_errors():
    """Turn library errors into a red message and an exit code."""
    try:
        yield
    except TrainingDivergedError as e:
        console.print(f"[red]❌ Training diverged: {e}[/red]")
        raise typer.Exit(code=EXIT_FAILURE)
    except USAGE_ERRORS as e:
        logger.debug("Command failed", exc_info=True)
        console.print(f"[red]❌ {e}[/red]")
        raise typer.Exit(code=EXIT_USAGE)


def output_dir(command: str, suffix: Optional[str] = None) -> Path:
    name = f"{command}_{suffix}" if suffix else command
    path = Path(settings.OUTPUT_DIR) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def finish_run(manifest: RunManifest, out_dir: Path, headline: str, arm: Optional[str] = None) -> Path:
    path = manifest.write(out_dir)
    wall = manifest.timings.get("total", sum(manifest.timings.values()))
    record_run(
        manifest.command, manifest.numeric_mode, manifest.version, arm=arm, seed=manifest.seed,
        wall_seconds=wall, headline=headline, manifest_path=str(path),
    )
    console.print(f"[dim]📁 Manifest: {path}[/dim]")
    return path


def load_configs(config: Path, steps: Optional[int] = None):
    model_values, train_values = split_config(read_config_file(config))
    model_config = ModelConfig.from_mapping(model_values)
    train_config = TrainConfig.from_mapping(train_values)
    if steps is not None:
        train_config = replace(train_config, steps=steps)
    return model_config, train_config


def write_tsv(path: Path, headers: List[str], rows) -> Path:
    path.write_text(tabulate(rows, headers=headers, tablefmt="tsv", disable_numparse=True) + "\n")
    return path


def write_iou_table(path: Path, ious: List[Optional[float]], mean: float) -> Path:
    rows = [[k, format_iou(v)] for k, v in enumerate(ious)] + [["mean", f"{mean:.4f}"]]
    return write_tsv(path, ["class", "iou"], rows)


def print_iou(ious: List[Optional[float]], mean: float, accuracy: float, title: str):
    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("Class", style="cyan")
    table.add_column("IoU", style="green", justify="right")
    for k, v in enumerate(ious):
        table.add_row(str(k), format_iou(v) if v is not None else "[dim]n/a[/dim]")
    table.add_row("[bold]mIoU[/bold]", f"[bold]{mean:.4f}[/bold]")
    console.print(table)
    console.print(f"[dim]Pixel accuracy: {accuracy:.4f}[/dim]")


def iou_metrics(ious: List[Optional[float]]) -> dict:
    return {f"iou_{k}": (v if v is not None else "n/a") for k, v in enumerate(ious)}


@app.command("gen-prior")
def gen_prior(
    depth: Path = typer.Option(..., "--depth", help="16-bit PGM depth map"),
    patch: int = typer.Option(16, "--patch", help="Pooling patch size in pixels"),
    beta: float = typer.Option(0.75, "--beta", help="Decay rate in (0, 1]"),
    out: Path = typer.Option(..., "--out", help="Folder for the heatmaps"),
):
    """
    🗺️ Visualise the geometry prior of a depth map

    Writes D, S and G plus the decay rows of four query tokens as 8-bit PGM
    heatmaps, and a summary of the unscaled value ranges.
    """
    console.print(f"\n🗺️ [bold cyan]Geometry prior for {depth}[/bold cyan]\n")
    with command_errors():
        start = time.perf_counter()
        viz = generate_prior_heatmaps(depth, patch, beta, out)
        elapsed = time.perf_counter() - start

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Map", style="cyan")
    table.add_column("Min", justify="right")
    table.add_column("Max", justify="right")
    for name, (lo, hi) in viz.ranges.items():
        table.add_row(name, f"{lo:.4g}", f"{hi:.4g}")
    console.print(table)
    console.print(f"[green]✅ Wrote {len(viz.files)} files to {out} ({viz.grid[0]}x{viz.grid[1]} token grid)[/green]")

    manifest = RunManifest(
        "gen-prior", numeric_mode=WIDE,
        config={"depth": str(depth), "patch": patch, "beta": beta, "out": str(out)},
        timings={"total": elapsed},
        metrics={f"{name}_{side}": value for name, (lo, hi) in viz.ranges.items()
                 for side, value in (("min", lo), ("max", hi))},
    )
    finish_run(manifest, output_dir("gen-prior"), headline=f"{viz.grid[0]}x{viz.grid[1]} grid")


@app.command()
def check(
    suite: Suite = typer.Option(Suite.ALL, "--suite", help="Property suite to run"),
    inject_fault: Optional[str] = typer.Option(None, "--inject-fault", hidden=True),
):
    """
    🔍 Run the property suites

    Every check uses fixed seeds and reports its worst observed error. Exits
    with 1 when any check fails.
    """
    if inject_fault is not None and inject_fault not in FAULTS:
        console.print(f"[red]❌ Unknown fault '{inject_fault}'; choose from {', '.join(FAULTS)}[/red]")
        raise typer.Exit(code=EXIT_USAGE)
    names = SUITE_NAMES if suite == Suite.ALL else (suite.value,)
    console.print(f"\n🔍 [bold cyan]Property suites: {', '.join(names)}[/bold cyan]\n")
    if inject_fault:
        console.print(f"[yellow]⚠️ Fault injected: {inject_fault}[/yellow]\n")

    start = time.perf_counter()
    results = run_suites(suite.value, fault=inject_fault)
    elapsed = time.perf_counter() - start

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Suite", style="cyan")
    table.add_column("Check", style="blue")
    table.add_column("Status", width=6)
    table.add_column("Worst error", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Seed", justify="right")
    table.add_column("Seconds", justify="right", style="dim")
    for r in results:
        status = "[green]PASS[/green]" if r.passed else "[red]FAIL[/red]"
        tolerance = "-" if r.tolerance is None else f"{r.tolerance:.0e}"
        seed = "-" if r.seed is None else str(r.seed)
        table.add_row(r.suite, r.name, status, f"{r.worst:.3e}", tolerance, seed, f"{r.seconds:.2f}")
    console.print(table)

    failed = [r for r in results if not r.passed]
    for r in failed:
        console.print(f"[red]❌ {r.suite}.{r.name}: {r.detail}"
                      + (f" (counterexample seed {r.seed})" if r.seed is not None else "") + "[/red]")

    out_dir = output_dir("check", suite.value)
    rows = [[r.suite, r.name, "pass" if r.passed else "fail", repr(r.worst),
             "" if r.seed is None else r.seed] for r in results]
    write_tsv(out_dir / "checks.tsv", ["suite", "check", "status", "worst", "seed"], rows)
    manifest = RunManifest(
        "check", numeric_mode=WIDE,
        config={"suite": suite.value, "fault": inject_fault or "none"},
        timings={"total": elapsed},
        metrics={**{f"{r.suite}.{r.name}": r.worst for r in results}, "failed": len(failed)},
    )
    finish_run(manifest, out_dir, headline=f"{len(results) - len(failed)}/{len(results)} passed")

    if failed:
        raise typer.Exit(code=EXIT_FAILURE)
    console.print(f"[green]✅ All {len(results)} checks passed[/green]")


@app.command()
def bench(
    grid: str = typer.Option("32x32", "--grid", help="Token grid as HxW"),
    dim: int = typer.Option(64, "--dim", help="Channels C"),
    heads: int = typer.Option(4, "--heads", help="Attention heads"),
    mode: BenchMode = typer.Option(BenchMode.BOTH, "--mode", help="Attention mode(s) to time"),
    repeat: int = typer.Option(5, "--repeat", help="Timed repeats per mode"),
    numeric_mode: str = typer.Option(NARROW, "--numeric-mode", help="wide or narrow float"),
):
    """
    ⏱️ Benchmark full against axial geometry attention

    Analytic FLOPs are input-independent; wall time is the median over the repeats.
    """
    with command_errors():
        H, W = parse_grid(grid)
        modes = [AttentionMode.FULL, AttentionMode.AXIAL] if mode == BenchMode.BOTH else [AttentionMode(mode.value)]
        console.print(f"\n⏱️ [bold cyan]Attention benchmark: {H}x{W} grid, C={dim}, {heads} heads[/bold cyan]\n")
        report = run_bench(H, W, dim, heads, modes, repeat=repeat, numeric_mode=numeric_mode)

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Mode", style="cyan")
    table.add_column("Attention FLOPs", justify="right")
    table.add_column("Layer FLOPs", justify="right")
    table.add_column("Median ms", justify="right", style="green")
    for row in report.rows:
        table.add_row(row.mode.value, f"{row.attention_flops:,}", f"{row.layer_flops:,}",
                      f"{row.median_seconds * 1e3:.3f}")
    console.print(table)
    if report.flop_ratio is not None:
        console.print(f"[bold]Axial/full attention FLOPs:[/bold] {report.flop_ratio:.4f}")
        console.print(f"[bold]Axial/full median time:[/bold] {report.time_ratio:.4f}")

    out_dir = output_dir("bench", f"{H}x{W}_{mode.value}")
    rows = [[r.mode.value, r.attention_flops, r.layer_flops, repr(r.median_seconds)] for r in report.rows]
    write_tsv(out_dir / "bench.tsv", ["mode", "attention_flops", "layer_flops", "median_seconds"], rows)
    metrics = {f"{r.mode.value}.attention_flops": r.attention_flops for r in report.rows}
    metrics.update({f"{r.mode.value}.median_seconds": r.median_seconds for r in report.rows})
    if report.flop_ratio is not None:
        metrics.update(flop_ratio=report.flop_ratio, time_ratio=report.time_ratio)
    manifest = RunManifest(
        "bench", numeric_mode=numeric_mode,
        config={"grid": f"{H}x{W}", "dim": dim, "heads": heads, "mode": mode.value, "repeat": repeat},
        timings={f"{r.mode.value}_median": r.median_seconds for r in report.rows},
        metrics=metrics,
    )
    finish_run(manifest, out_dir, headline=f"flop ratio {report.flop_ratio}" if report.flop_ratio else mode.value)


@app.command("model-info")
def model_info(
    config: Path = typer.Option(DEFAULT_CONFIG, "--config", help="Model config file"),
    size: Optional[int] = typer.Option(None, "--size", help="Square input size (defaults to image_size)"),
):
    """
    📐 Show parameter and FLOP accounting for a model config
    """
    with command_errors():
        model_values, train_values = split_config(read_config_file(config))
        model_config = ModelConfig.from_mapping(model_values)
        size = size or safe_get(train_values, "image_size", TrainConfig.image_size)
        params = count_params(model_config)
        flops = estimate_flops(model_config, size, size)
        flops_full = estimate_flops(model_config, size, size, mode=AttentionMode.FULL)

    console.print(f"\n📐 [bold cyan]Model {config} at {size}x{size}[/bold cyan]\n")
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Component", style="cyan")
    table.add_column("Parameters", justify="right", style="green")
    for name, count in params.items:
        table.add_row(name, f"{count:,}")
    table.add_row("[bold]total[/bold]", f"[bold]{params.total:,}[/bold]")
    console.print(table)
    console.print(f"[bold]FLOPs (configured):[/bold] {flops.total:,}")
    console.print(f"[bold]FLOPs (all full attention):[/bold] {flops_full.total:,}")
    for s, (H, W) in enumerate(flops.stage_grids):
        console.print(f"[dim]Stage {s}: {H}x{W} grid, axial/full attention ratio {flops.attention_ratio(s):.4f}[/dim]")


@app.command("gen-data")
def gen_data(
    seed: int = typer.Option(0, "--seed"),
    count: int = typer.Option(8, "--count", help="Number of scenes"),
    size: int = typer.Option(64, "--size", help="Square scene size (multiple of 32)"),
    classes: int = typer.Option(4, "--classes", help="Number of classes K"),
    out: Optional[Path] = typer.Option(None, "--out", help="Dataset folder"),
):
    """
    🎨 Generate a synthetic RGB-D dataset

    Scenes contain one rectangle per class; two classes share a colour and differ
    only in depth. Writes PPM/PGM files and a dataset manifest.
    """
    with command_errors():
        if count < 1:
            raise ParameterError(f"count must be >= 1, got {count}")
        out_dir = out or output_dir("gen-data", f"s{seed}")
        start = time.perf_counter()
        samples = build_synthetic_split(seed, count, size, size, classes)
        dataset = write_dataset(samples, out_dir)
        elapsed = time.perf_counter() - start

    console.print(f"[green]✅ Wrote {count} scenes ({size}x{size}, K={classes}) to {out_dir}[/green]")
    console.print(f"[dim]🗂️ Dataset manifest: {dataset}[/dim]")
    manifest = RunManifest(
        "gen-data", seed=seed, numeric_mode=WIDE,
        config={"count": count, "size": size, "classes": classes, "out": str(out_dir)},
        timings={"total": elapsed},
        metrics={"samples": count, "dataset_manifest": str(dataset)},
    )
    finish_run(manifest, output_dir("gen-data", f"s{seed}"), headline=f"{count} scenes")


@app.command("train-toy")
def train_toy_command(
    config: Path = typer.Option(DEFAULT_CONFIG, "--config", help="Model and training config file"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Override the configured step count"),
    arm: Arm = typer.Option(Arm("both-axial"), "--arm", help="Ablation arm"),
    seed: int = typer.Option(0, "--seed"),
):
    """
    🏋️ Train one ablation arm on synthetic scenes

    Logs the training loss, saves a checkpoint and evaluates the reloaded
    checkpoint on the validation split.
    """
    arm_name = Arm(arm).value
    console.print(f"\n🏋️ [bold cyan]Toy training: arm {arm_name}, seed {seed}[/bold cyan]\n")

    def on_log(step: int, loss: float, lr: float):
        console.print(f"[dim]step {step:>4}  loss {loss:.4f}  lr {lr:.3e}[/dim]")

    with command_errors():
        model_config, train_config = load_configs(config, steps)
        out_dir = output_dir("train-toy", f"{arm_name}_s{seed}")
        start = time.perf_counter()
        run = train_toy(model_config, train_config, arm_name, seed, out_dir, on_log=on_log)
        elapsed = time.perf_counter() - start

    mean, ious = miou(run.confusion)
    print_iou(ious, mean, run.pixel_accuracy, title=f"Validation IoU ({arm_name})")
    write_iou_table(out_dir / "iou.tsv", ious, mean)
    console.print(f"[green]✅ Checkpoint saved to {run.checkpoint}[/green]")

    metrics = {
        "final_loss": run.result.final_loss if run.result.final_loss is not None else "n/a",
        "miou": mean,
        "pixel_accuracy": run.pixel_accuracy,
        **iou_metrics(ious),
        "checkpoint": str(run.checkpoint),
    }
    manifest = RunManifest(
        "train-toy", seed=seed, numeric_mode=run.model_config.numeric_mode,
        config={"arm": arm_name, **run.model_config.to_mapping(), **run.train_config.to_mapping()},
        timings={"train": run.result.seconds, "total": elapsed},
        metrics=metrics,
    )
    finish_run(manifest, out_dir, headline=f"mIoU {mean:.4f}", arm=arm_name)


@app.command()
def ablate(
    config: Path = typer.Option(DEFAULT_CONFIG, "--config", help="Model and training config file"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Override the configured step count"),
    arms: Optional[List[Arm]] = typer.Option(None, "--arm", help="Arm to include (repeatable; default all)"),
    seeds: int = typer.Option(3, "--seeds", help="Seeds 0..N-1 per arm"),
):
    """
    🧪 Train several ablation arms over several seeds

    Reports the median validation mIoU per arm and whether the depth prior
    ranks above the plain-attention arms.
    """
    arm_names = [Arm(a).value for a in arms] if arms else list(ARMS)
    console.print(f"\n🧪 [bold cyan]Ablation: {', '.join(arm_names)} over {seeds} seed(s)[/bold cyan]\n")

    def on_run(run):
        console.print(f"[dim]{run.arm:<13} seed {run.seed}  mIoU {run.miou:.4f}  loss {run.result.final_loss}[/dim]")

    with command_errors():
        if seeds < 1:
            raise ParameterError(f"seeds must be >= 1, got {seeds}")
        model_config, train_config = load_configs(config, steps)
        out_dir = output_dir("ablate", f"{len(arm_names)}arms_{seeds}seeds")
        start = time.perf_counter()
        result = run_ablation(model_config, train_config, arm_names, range(seeds), out_dir, on_run=on_run)
        elapsed = time.perf_counter() - start

    medians = result.medians()
    table = Table(title="Median validation mIoU", show_header=True, header_style="bold magenta")
    table.add_column("Arm", style="cyan")
    for s in range(seeds):
        table.add_column(f"Seed {s}", justify="right")
    table.add_column("Median", justify="right", style="green")
    for arm in arm_names:
        table.add_row(arm, *(f"{v:.4f}" for v in result.mious(arm)), f"[bold]{medians[arm]:.4f}[/bold]")
    console.print(table)

    rows = [[arm, *(repr(v) for v in result.mious(arm)), repr(medians[arm])] for arm in arm_names]
    write_tsv(out_dir / "ablation.tsv", ["arm", *(f"seed_{s}" for s in range(seeds)), "median_miou"], rows)
    metrics = {f"{arm}.median_miou": medians[arm] for arm in arm_names}
    if "both" in medians and "vanilla" in medians:
        gap = medians["both"] - medians["vanilla"]
        metrics["both_minus_vanilla"] = gap
        console.print(f"[bold]both - vanilla:[/bold] {gap:+.4f}")
    manifest = RunManifest(
        "ablate", seed=None, numeric_mode=model_config.numeric_mode,
        config={"arms": ", ".join(arm_names), "seeds": seeds, **model_config.to_mapping(), **train_config.to_mapping()},
        timings={"total": elapsed},
        metrics=metrics,
    )
    best = max(medians, key=medians.get)
    finish_run(manifest, out_dir, headline=f"best {best} {medians[best]:.4f}")


@app.command("eval")
def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Checkpoint written by train-toy"),
    manifest: Path = typer.Option(..., "--manifest", help="Dataset manifest (manifest.tsv)"),
):
    """
    📊 Evaluate a checkpoint on a dataset

    Single-scale evaluation; prints per-class IoU and the mean over classes present.
    """
    console.print(f"\n📊 [bold cyan]Evaluating {checkpoint}[/bold cyan]\n")
    with command_errors():
        start = time.perf_counter()
        model = load_model(checkpoint)
        samples = load_dataset(manifest)
        if not samples:
            raise DataError(f"{manifest}: no samples")
        K = model.config.num_classes
        for sample in samples:
            try:
                sample.check_labels(K)
            except DataError as e:
                raise DataError(f"Checkpoint {checkpoint} predicts {K} classes; {e}") from None
        confusion = evaluate(model, samples)
        elapsed = time.perf_counter() - start

    mean, ious = miou(confusion)
    accuracy = pixel_accuracy(confusion)
    print_iou(ious, mean, accuracy, title=f"IoU on {len(samples)} samples")
    out_dir = output_dir("eval", checkpoint.stem)
    write_iou_table(out_dir / "iou.tsv", ious, mean)
    run_manifest = RunManifest(
        "eval", numeric_mode=model.config.numeric_mode,
        config={"checkpoint": str(checkpoint), "manifest": str(manifest), "samples": len(samples)},
        timings={"total": elapsed},
        metrics={"miou": mean, "pixel_accuracy": accuracy, **iou_metrics(ious)},
    )
    finish_run(run_manifest, out_dir, headline=f"mIoU {mean:.4f}")


@app.command()
def runs(limit: int = typer.Option(20, "--limit", help="Number of rows")):
    """
    📋 List recent runs from the run ledger
    """
    rows = recent_runs(limit)
    if not rows:
        console.print("[yellow]No runs recorded yet[/yellow]")
        return
    table = Table(title="Recent Runs", show_header=True, header_style="bold cyan")
    table.add_column("ID", style="dim", justify="right")
    table.add_column("When", style="cyan")
    table.add_column("Command", style="bright_blue")
    table.add_column("Arm", style="yellow")
    table.add_column("Seed", justify="right")
    table.add_column("Mode")
    table.add_column("Seconds", justify="right")
    table.add_column("Headline", style="green")
    for run in rows:
        when = run.created_at.strftime("%Y-%m-%d %H:%M") if run.created_at else "Unknown"
        seconds = f"{run.wall_seconds:.1f}" if run.wall_seconds is not None else "-"
        table.add_row(str(run.id), when, run.command, run.arm or "-", "-" if run.seed is None else str(run.seed),
                      run.numeric_mode, seconds, run.headline or "")
    console.print(table)


@app.callback(invoke_without_command=True)
def main_callback(ctx: typer.Context):
    """Default callback - show the banner and command list when no command is provided."""
    if ctx.invoked_subcommand is None:
        lab_banner()
        list_commands()
        console.print("\n[dim]Use 'python dformer_lab.py <command> --help' for the options of a command[/dim]")


if __name__ == "__main__":
    app()

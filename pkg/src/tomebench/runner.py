"""Orchestration: resolve a harness config, execute runs, write artifacts."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ConfigError, HarnessConfig, config_dict
from .diffusion import ErrorMetrics, Schedule, compare_to_baseline, denoise, make_init_noise
from .grid import GridShape, TokenGrid
from .matching import build_merge_plan, export_edge_list, tokens_to_remove
from .metrics import RunReport, aggregate, report_csv_row, sweep_csv, timing_dict
from .partition import PartitionScheme, expected_dst_count, make_partition
from .rng import StreamRng
from .unet import RunTrace, UNetModel, UNetSpec, init_unet
from .viz import merge_map_to_ppm, write_partition_ppms


def build_spec(harness: HarnessConfig) -> UNetSpec:
    scales = tuple((h, w, harness.blocks_per_scale) for h, w in harness.scale_dims())
    return UNetSpec(
        scales=scales,
        channels=harness.channels,
        heads=harness.heads,
        prompt_tokens=harness.prompt_tokens,
        weight_seed=harness.weight_seed,
    )


def build_schedule(harness: HarnessConfig) -> Schedule:
    start, end = harness.tome.schedule_endpoints()
    return Schedule(harness.steps, start, end)


def validate_capacity(harness: HarnessConfig) -> None:
    """Reject ratios the src set cannot supply, naming the feasible bound."""
    tome = harness.tome
    max_ratio = tome.max_ratio()
    if max_ratio == 0.0:
        return
    min_tokens = harness.resolved_min_tokens()
    for h, w in harness.scale_dims():
        n = h * w
        if n < min_tokens:
            continue
        src = n - expected_dst_count(GridShape(1, h, w), tome.partition)
        r = tokens_to_remove(max_ratio, n)
        if r > src:
            raise ConfigError(
                f"field 'ratio': r={r} exceeds the {src}-token src set of the {h}x{w} "
                f"grid under partition {tome.partition.spec_string()}; "
                f"largest feasible ratio is {src / n:.4f}"
            )


def resolve(harness: HarnessConfig) -> dict:
    """Validate and return the canonical resolved config dict."""
    validate_capacity(harness)
    return config_dict(harness)


@dataclass
class RunOutput:
    harness: HarnessConfig
    report: RunReport
    timing: dict
    final: TokenGrid
    baseline_final: TokenGrid | None
    trace: RunTrace


def execute_run(harness: HarnessConfig, model: UNetModel | None = None) -> RunOutput:
    """Run the configured denoise (and its baseline when comparison is on)."""
    resolve(harness)
    spec = build_spec(harness)
    schedule = build_schedule(harness)
    if model is None:
        model = init_unet(spec)
    tome = harness.tome
    noise = make_init_noise(spec, tome.seed)

    trace = RunTrace()
    active_tome = tome if tome.max_ratio() > 0.0 else None
    final = denoise(model, noise, schedule, active_tome, harness.guidance_scale, trace)

    baseline_final = None
    errors: ErrorMetrics | None = None
    if harness.compare_baseline:
        if active_tome is None:
            baseline_final = final
        else:
            baseline_final = denoise(model, noise, schedule, None, harness.guidance_scale)
        errors = compare_to_baseline(baseline_final, final)

    report = aggregate(harness, spec, schedule, trace, errors)
    return RunOutput(harness, report, timing_dict(trace), final, baseline_final, trace)


def _write_viz(harness: HarnessConfig, out_dir: Path) -> list[Path]:
    """Render the top-scale partition mask and a step-0 merge map preview."""
    spec = build_spec(harness)
    tome = harness.tome
    h, w, _ = spec.scales[0]
    plan = make_partition(GridShape(2, h, w), tome.partition, StreamRng(tome.seed), 0, 0)
    paths = write_partition_ppms(plan, out_dir)

    noise = make_init_noise(spec, tome.seed)
    ratio = tome.schedule_endpoints()[0]
    if ratio > 0.0:
        mplan = build_merge_plan(noise.element(0), plan, ratio, element=0)
        path = out_dir / "merge_map_step0.ppm"
        path.write_bytes(merge_map_to_ppm(mplan, h, w))
        paths.append(path)
        edges_path = out_dir / "merge_edges_step0.txt"
        edges_path.write_text(export_edge_list(mplan))
        paths.append(edges_path)
    return paths


def write_run_artifacts(output: RunOutput, out_dir: str | Path) -> dict[str, Path]:
    """Write report + timing (and visualizations when enabled); returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    if output.harness.report_format == "json":
        report_path = out_dir / "report.json"
        report_path.write_bytes(output.report.to_json_bytes())
    else:
        report_path = out_dir / "report.csv"
        row = report_csv_row(output.report)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row.keys()))
        writer.writeheader()
        writer.writerow(row)
        report_path.write_text(buf.getvalue())
    written["report"] = report_path

    timing_path = out_dir / "timing.json"
    timing_path.write_text(json.dumps(output.timing, indent=2) + "\n")
    written["timing"] = timing_path

    if output.harness.viz_partition:
        for path in _write_viz(output.harness, out_dir):
            written[path.name] = path
    return written


def sweep_points(base: HarnessConfig, ratios: list[float] | None = None,
                 partitions: list[str] | None = None,
                 seeds: list[int] | None = None) -> list[HarnessConfig]:
    """Cartesian product of the requested sweep axes over a base config."""
    points = [base]

    def vary(configs, values, apply):
        if not values:
            return configs
        return [apply(cfg, v) for cfg in configs for v in values]

    points = vary(points, ratios, lambda cfg, r: replace(
        cfg, tome=replace(cfg.tome, ratio=r, ratio_start=None, ratio_end=None)))
    points = vary(points, partitions, lambda cfg, p: replace(
        cfg, tome=replace(cfg.tome, partition=PartitionScheme.parse(
            p, cfg.tome.partition.batch_fix))))
    points = vary(points, seeds, lambda cfg, s: replace(cfg, tome=replace(cfg.tome, seed=s)))
    return points


def run_sweep(points: list[HarnessConfig], out_dir: str | Path, workers: int = 4) -> list[RunOutput]:
    """Execute sweep points in a worker pool; report writing stays serialized."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    models: dict[tuple, UNetModel] = {}
    for point in points:
        spec = build_spec(point)
        key = (spec.scales, spec.channels, spec.heads, spec.prompt_tokens, spec.weight_seed)
        if key not in models:
            models[key] = init_unet(spec)

    def run_point(point: HarnessConfig) -> RunOutput:
        spec = build_spec(point)
        key = (spec.scales, spec.channels, spec.heads, spec.prompt_tokens, spec.weight_seed)
        return execute_run(point, models[key])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outputs = list(pool.map(run_point, points))

    for i, output in enumerate(outputs):
        point_dir = out_dir / f"point_{i:03d}"
        write_run_artifacts(output, point_dir)
    (out_dir / "sweep.csv").write_text(sweep_csv([o.report for o in outputs]))
    return outputs

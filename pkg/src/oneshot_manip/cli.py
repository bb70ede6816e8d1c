"""Command-line entry point: gen-demos | decompose | evaluate | report.

Exit codes: 0 success, 1 usage, 2 config, 3 io, 4 VLM transport/credential,
5 metrics grid mismatch, 6 VLM response validation.
"""

from __future__ import annotations

import json
import os
import sys
from typing import Optional

import click

from . import __version__
from .config import ConfigInvalid, load_config
from .segmenter import NoGraspDetected, TruncatedCycle, segment_rule_based
from .vlm import (EndpointConfig, ResponseValidationError, VlmClientError,
                  call_chat_endpoint, decomposition_to_json, parse_response,
                  render_prompt)

EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VLM = 4
EXIT_GRID = 5
EXIT_VLM_RESPONSE = 6


@click.group(name="oneshot-manip")
@click.version_option(__version__)
def cli() -> None:
    """One-shot imitation benchmark tools."""


@cli.command("gen-demos")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Benchmark TOML config; defaults apply when omitted.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Output directory for task and demo files.")
@click.option("--levels", default=None, help="Comma-separated level override.")
@click.option("--seeds", default=None, help="Comma-separated seed override.")
def cmd_gen_demos(config_path: Optional[str], out_dir: str,
                  levels: Optional[str], seeds: Optional[str]) -> None:
    """Generate tasks and scripted expert demonstrations."""
    from .simbench import harness, io as sio
    from .simbench.tasks import generate_task
    from .simbench.expert import scripted_expert

    config = load_config(config_path)
    level_list = _parse_int_list(levels) or config.benchmark.levels
    seed_list = _parse_int_list(seeds) or config.benchmark.seeds

    os.makedirs(out_dir, exist_ok=True)
    sio.write_manifest(out_dir, config_path, config.to_dict(), __version__)
    for level in level_list:
        for seed in seed_list:
            task = generate_task(level, seed, config.benchmark.cloud_density,
                                 config.benchmark.min_object_points,
                                 config.benchmark.tolerance_pos,
                                 config.benchmark.tolerance_rot)
            demo = scripted_expert(task,
                                   noise_sigma=config.benchmark.cloud_noise_sigma)
            sio.save_task(task, os.path.join(out_dir, harness.task_filename(level, seed)))
            sio.save_demo(demo, os.path.join(out_dir, harness.demo_filename(level, seed)))
            click.echo(f"{task.task_id}: {len(demo)} frames, "
                       f"{task.n_interactions} phases, {len(task.objects)} objects")


@cli.command("decompose")
@click.argument("demo_file", type=click.Path())
@click.option("--mode", type=click.Choice(["rule", "vlm"]), default="rule")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--endpoint-url", default=None, help="Chat endpoint URL override.")
@click.option("--model", default=None, help="Model name override.")
@click.option("--lenient", is_flag=True, help="Repair single-frame gaps.")
@click.option("--task-type", type=click.Choice(["A", "B", "C", "D"]), default="A")
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_decompose(demo_file: str, mode: str, config_path: Optional[str],
                  endpoint_url: Optional[str], model: Optional[str],
                  lenient: bool, task_type: str, out_path: Optional[str]) -> None:
    """Decompose a demonstration into interaction phases."""
    frames = _load_proprio_frames(demo_file)
    config = load_config(config_path)

    if mode == "rule":
        try:
            decomposition = segment_rule_based(
                frames, config.pipeline.v_zero_threshold)
        except TruncatedCycle as exc:
            raise click.ClickException(
                f"truncated cycle after phase {len(exc.partial.phases)}: {exc}")
        except (NoGraspDetected, ValueError) as exc:
            raise click.ClickException(str(exc))
    else:
        endpoint = config.vlm.endpoint_config()
        if endpoint_url:
            endpoint = EndpointConfig(url=endpoint_url,
                                      model=model or endpoint.model,
                                      credential_env=endpoint.credential_env,
                                      timeout_s=endpoint.timeout_s,
                                      max_retries=endpoint.max_retries,
                                      temperature=endpoint.temperature)
        prompt = render_prompt(frames, task_type)
        body = call_chat_endpoint(prompt, endpoint)
        decomposition = parse_response(body, len(frames), lenient=lenient)

    text = decomposition_to_json(decomposition)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


@cli.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--mode", type=click.Choice(["oracle", "descriptor", "random"]),
              default=None, help="Pipeline mode override.")
@click.option("--demos", "demo_dir", type=click.Path(), default=None,
              help="Directory of gen-demos output to reuse.")
@click.option("--model-name", default=None, help="Label for the results rows.")
def cmd_evaluate(config_path: Optional[str], out_dir: str, jobs: int,
                 mode: Optional[str], demo_dir: Optional[str],
                 model_name: Optional[str]) -> None:
    """Run the trial grid and write results.csv plus metrics.json."""
    from .simbench import harness, io as sio
    from .simbench.metrics import compute_metrics, results_to_table

    config = load_config(config_path)
    effective_mode = mode or config.pipeline.mode
    label = model_name or effective_mode

    os.makedirs(out_dir, exist_ok=True)
    sio.write_manifest(out_dir, config_path, config.to_dict(), __version__)
    results = harness.run_grid(config, mode=effective_mode, jobs=jobs,
                               demo_dir=demo_dir)
    tagged = [(label, r) for r in results]
    csv_path = os.path.join(out_dir, "results.csv")
    sio.write_results_csv(tagged, csv_path)

    rows = sio.read_results_csv(csv_path)
    report = compute_metrics(results_to_table(rows))
    sio.save_metrics_json(report.to_dict(), os.path.join(out_dir, "metrics.json"))

    click.echo(f"model: {label}")
    per_level: dict[int, list[bool]] = {}
    for r in results:
        per_level.setdefault(r.level, []).append(r.success)
    for level in sorted(per_level):
        outcomes = per_level[level]
        rate = 100.0 * sum(outcomes) / len(outcomes)
        click.echo(f"  level {level}: {rate:5.1f} % over {len(outcomes)} trials")
    click.echo(f"results: {csv_path}")


@cli.command("report")
@click.argument("results_files", nargs=-1, required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv"]),
              default="markdown", show_default=True)
def cmd_report(results_files: tuple[str, ...], fmt: str) -> None:
    """Per-task success table with fractional ranks across models."""
    from .simbench import io as sio
    from .simbench.metrics import compute_metrics, results_to_table

    rows = []
    for path in results_files:
        rows.extend(sio.read_results_csv(path))
    report = compute_metrics(results_to_table(rows))
    models = sorted(report.average_success)

    if fmt == "csv":
        click.echo("task," + ",".join(models))
        for task in report.tasks:
            cells = [f"{report.per_task[m][task][0] * 100:.1f}"
                     f"±{report.per_task[m][task][1] * 100:.1f}" for m in models]
            click.echo(task + "," + ",".join(cells))
        click.echo("avg_success," + ",".join(
            f"{report.average_success[m] * 100:.1f}" for m in models))
        click.echo("avg_rank," + ",".join(
            f"{report.average_rank[m]:.2f}" for m in models))
        return

    width = max(len(t) for t in report.tasks + ("task", "avg. success",))
    header = "| " + "task".ljust(width) + " | " + " | ".join(
        m.ljust(13) for m in models) + " |"
    rule = "|-" + "-" * width + "-|" + "|".join("-" * 15 for _ in models) + "|"
    click.echo(header)
    click.echo(rule)
    for task in report.tasks:
        cells = []
        for m in models:
            mu, sd = report.per_task[m][task]
            cells.append(f"{mu * 100:5.1f} ± {sd * 100:4.1f}".ljust(13))
        click.echo("| " + task.ljust(width) + " | " + " | ".join(cells) + " |")
    click.echo("| " + "avg. success".ljust(width) + " | " + " | ".join(
        f"{report.average_success[m] * 100:5.1f}".ljust(13) for m in models) + " |")
    click.echo("| " + "avg. rank".ljust(width) + " | " + " | ".join(
        f"{report.average_rank[m]:5.2f}".ljust(13) for m in models) + " |")


def _parse_int_list(text: Optional[str]) -> Optional[tuple[int, ...]]:
    if text is None:
        return None
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise click.UsageError(f"expected comma-separated integers: {text!r}") from exc


def _load_proprio_frames(path: str):
    import numpy as np

    from .se3 import Pose
    from .state import ProprioFrame

    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            frames.append(ProprioFrame(
                int(record["t"]), bool(record["gripper_open"]),
                np.asarray(record["joint_velocities"], dtype=np.float64),
                Pose.from_matrix(
                    np.asarray(record["ee_pose"], dtype=np.float64).reshape(4, 4))))
    if not frames:
        raise click.ClickException(f"{path} contains no frames")
    return frames


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point with the documented exit-code taxonomy."""
    from .simbench.metrics import GridMismatch

    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except ConfigInvalid as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except ResponseValidationError as exc:
        click.echo(f"vlm response invalid: {exc}", err=True)
        return EXIT_VLM_RESPONSE
    except VlmClientError as exc:
        click.echo(f"vlm transport error: {exc}", err=True)
        return EXIT_VLM
    except GridMismatch as exc:
        click.echo(f"grid mismatch: {exc}", err=True)
        return EXIT_GRID
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"io error: {exc}", err=True)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

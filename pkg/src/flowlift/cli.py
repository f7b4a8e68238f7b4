"""Command-line entry point wiring dataset generation, training, sampling,
evaluation, and benchmarking.

Option precedence is CLI flag > config file > built-in default. A config
file is plain ``key=value`` lines where keys are option names with
underscores (e.g. ``steps=3``). Exit codes: 2 for configuration errors
(bad flags, malformed config), 1 for any runtime/module error.
"""

from __future__ import annotations

import statistics
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import checkpoint, report
from .aggregate import RpeaConfig, fha_expand
from .data import (Dataset, DatasetError, SamplerConfig, export_csv, generate,
                   load, save)
from .evaluate import STRATEGIES, compare_strategies, sample_hypothesis_sets
from .flow import FlowConfig, Model, sample_hypotheses, train
from .metrics import mpjpe
from .network import NetConfig
from .skeleton import SkeletonError, animal26, human17

SKELETONS = {"human17": human17, "animal26": animal26}


class ConfigError(click.UsageError):
    """Configuration problem; click maps UsageError to exit code 2."""


def _read_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config(ctx: click.Context, values: dict[str, str]) -> None:
    """Overwrite defaulted parameters with config-file values; explicit
    command-line flags always win."""
    params = {p.name: p for p in ctx.command.params}
    for key, raw in values.items():
        if key == "config":
            continue
        param = params.get(key)
        if param is None:
            raise ConfigError(f"unknown config key {key!r}")
        src = ctx.get_parameter_source(key)
        if src is not None and src.name != "DEFAULT":
            continue
        try:
            if param.multiple:
                ctx.params[key] = tuple(
                    param.type.convert(v.strip(), param, ctx)
                    for v in raw.split(","))
            else:
                ctx.params[key] = param.type.convert(raw, param, ctx)
        except click.UsageError:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r}")


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


def _load_dataset(path: str) -> Dataset:
    try:
        return load(path)
    except (DatasetError, SkeletonError, OSError) as exc:
        _fail(exc)


def _load_model(path: str) -> Model:
    try:
        return Model.load(path)
    except (checkpoint.CheckpointError, SkeletonError, OSError) as exc:
        _fail(exc)


config_option = click.option(
    "--config", type=click.Path(), default=None,
    help="key=value config file; flags given on the command line win.")


@click.group()
@click.version_option(package_name="flowlift")
def main() -> None:
    """Flow-matching 2D-to-3D pose lifting on synthetic skeleton data."""


@main.command("gen")
@config_option
@click.option("--skeleton", type=click.Choice(sorted(SKELETONS)),
              default="human17", show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--noise-std", type=float, default=0.0, show_default=True,
              help="2D observation noise, normalized image units.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output dataset file.")
@click.option("--export-csv", "csv_path", type=click.Path(), default=None,
              help="Also dump a human-readable CSV here.")
@click.pass_context
def cmd_gen(ctx, config, skeleton, samples, noise_std, seed, out, csv_path):
    """Generate a synthetic paired 2D/3D dataset."""
    _apply_config(ctx, _read_config(config))
    p = ctx.params
    if p["samples"] < 1:
        raise ConfigError("--samples must be >= 1")
    if p["noise_std"] < 0:
        raise ConfigError("--noise-std must be >= 0")
    try:
        dataset = generate(SKELETONS[p["skeleton"]](), p["samples"],
                           p["noise_std"], p["seed"])
        save(dataset, p["out"])
        if p["csv_path"] is not None:
            export_csv(dataset, p["csv_path"])
    except (DatasetError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {len(dataset)} samples to {p['out']}")


@main.command("train")
@config_option
@click.option("--dataset", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--blocks", type=int, default=2, show_default=True)
@click.option("--heads", type=int, default=4, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output directory for checkpoint + training report.")
@click.pass_context
def cmd_train(ctx, config, dataset, epochs, batch_size, width, blocks, heads,
              lr, seed, out):
    """Train the velocity field; writes model.flcp plus a loss-curve
    CSV and SVG."""
    _apply_config(ctx, _read_config(config))
    p = ctx.params
    if p["epochs"] < 1 or p["batch_size"] < 1:
        raise ConfigError("--epochs and --batch-size must be >= 1")
    ds = _load_dataset(p["dataset"])
    try:
        net_cfg = NetConfig(n_joints=ds.skel.n_joints, width=p["width"],
                            blocks=p["blocks"], heads=p["heads"],
                            seed=p["seed"])
        flow_cfg = FlowConfig(epochs=p["epochs"], batch_size=p["batch_size"],
                              lr_init=p["lr"], seed=p["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    out_dir = Path(p["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, loss, cur_lr):
        click.echo(f"epoch {epoch:3d}  loss {loss:.6f}  lr {cur_lr:.2e}")

    try:
        model, history = train(ds.poses3d, ds.poses2d, ds.skel,
                               net_cfg, flow_cfg, progress=progress)
        model.save(out_dir / "model.flcp")
        report.training_report(history, out_dir)
    except (FloatingPointError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {out_dir / 'model.flcp'}")


@main.command("sample")
@config_option
@click.option("--checkpoint", "ckpt", type=click.Path(), required=True)
@click.option("--dataset", type=click.Path(), required=True)
@click.option("--index", type=int, default=0, show_default=True,
              help="Dataset sample to lift.")
@click.option("--hypotheses", type=int, default=20, show_default=True)
@click.option("--steps", type=int, default=3, show_default=True)
@click.option("--fha/--no-fha", default=True, show_default=True,
              help="Also sample from the mirrored 2D input.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output hypothesis dump (tensor container).")
@click.pass_context
def cmd_sample(ctx, config, ckpt, dataset, index, hypotheses, steps, fha,
               seed, out):
    """Sample 3D hypotheses for one 2D observation."""
    _apply_config(ctx, _read_config(config))
    p = ctx.params
    if p["hypotheses"] < 1 or p["steps"] < 1:
        raise ConfigError("--hypotheses and --steps must be >= 1")
    if p["fha"] and p["hypotheses"] % 2 != 0:
        raise ConfigError("--hypotheses must be even with --fha")
    model = _load_model(p["ckpt"])
    ds = _load_dataset(p["dataset"])
    if not 0 <= p["index"] < len(ds):
        raise ConfigError(f"--index out of range for {len(ds)} samples")
    obs = ds.poses2d[p["index"]]
    try:
        if p["fha"]:
            hyps = fha_expand(model, obs, ds.skel, p["hypotheses"] // 2,
                              p["steps"], p["seed"],
                              sample_index=p["index"])
            poses, provenance = hyps.poses, hyps.provenance
        else:
            poses = sample_hypotheses(model, obs, p["hypotheses"], p["steps"],
                                      2 * p["seed"], sample_index=p["index"])
            provenance = np.zeros(p["hypotheses"])
        checkpoint.save_tensors(p["out"], {
            "poses": poses,
            "provenance": provenance.astype(float),
            "observed2d": obs,
            "seed": np.array(float(p["seed"])),
        })
    except (FloatingPointError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {poses.shape[0]} hypotheses to {p['out']}")


@main.command("eval")
@config_option
@click.option("--checkpoint", "ckpt", type=click.Path(), required=True)
@click.option("--dataset", type=click.Path(), required=True)
@click.option("--hypotheses", type=int, multiple=True,
              default=(20,), show_default=True,
              help="Hypothesis counts to sweep (repeatable).")
@click.option("--steps", type=int, default=3, show_default=True)
@click.option("--alpha", type=float, default=10.0, show_default=True)
@click.option("--topk", type=int, default=None,
              help="Top-K kept by the softmax aggregation [default: N/2].")
@click.option("--fha/--no-fha", default=True, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output directory for strategies.csv + strategies.svg.")
@click.pass_context
def cmd_eval(ctx, config, ckpt, dataset, hypotheses, steps, alpha, topk, fha,
             seed, out):
    """Compare aggregation strategies over a dataset (CSV + SVG)."""
    _apply_config(ctx, _read_config(config))
    p = ctx.params
    if p["steps"] < 1 or any(n < 1 for n in p["hypotheses"]):
        raise ConfigError("--steps and --hypotheses must be >= 1")
    if p["fha"] and any(n % 2 for n in p["hypotheses"]):
        raise ConfigError("--hypotheses must all be even with --fha")
    try:
        rpea_cfg = RpeaConfig(alpha=p["alpha"], top_k=p["topk"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    model = _load_model(p["ckpt"])
    ds = _load_dataset(p["dataset"])
    out_dir = Path(p["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        rows = compare_strategies(model, ds, list(p["hypotheses"]),
                                  p["steps"], p["seed"], rpea_cfg,
                                  fha=p["fha"])
        csv_path, svg_path = report.strategy_report(rows, out_dir)
    except (FloatingPointError, ValueError, OSError) as exc:
        _fail(exc)
    for row in rows:
        click.echo(f"{row['strategy']:<12} N={row['n']:<4d} "
                   f"MPJPE {row['mpjpe']:8.3f}  P-MPJPE {row['p_mpjpe']:8.3f}")
    click.echo(f"wrote {csv_path} and {svg_path}")


@main.command("bench")
@config_option
@click.option("--checkpoint", "ckpt", type=click.Path(), required=True)
@click.option("--dataset", type=click.Path(), required=True)
@click.option("--steps", type=int, multiple=True, default=(1, 3, 8),
              show_default=True, help="Integration steps grid (repeatable).")
@click.option("--hypotheses", type=int, multiple=True, default=(1, 40),
              show_default=True, help="Hypothesis counts grid (repeatable).")
@click.option("--poses", type=int, default=20, show_default=True,
              help="Poses timed per grid cell.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output directory for bench.csv + bench.svg.")
@click.pass_context
def cmd_bench(ctx, config, ckpt, dataset, steps, hypotheses, poses, seed, out):
    """Wall-time per pose over an (S, N) grid; 3-run median."""
    _apply_config(ctx, _read_config(config))
    p = ctx.params
    if p["poses"] < 1 or any(v < 1 for v in p["steps"] + p["hypotheses"]):
        raise ConfigError("--poses, --steps, --hypotheses must be >= 1")
    model = _load_model(p["ckpt"])
    ds = _load_dataset(p["dataset"])
    count = min(p["poses"], len(ds))
    out_dir = Path(p["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_once(s: int, n: int) -> float:
        t0 = time.perf_counter()
        for i in range(count):
            sample_hypotheses(model, ds.poses2d[i], n, s, p["seed"],
                              sample_index=i)
        return (time.perf_counter() - t0) / count

    rows = []
    try:
        run_once(min(p["steps"]), min(p["hypotheses"]))  # warm-up
        for s in p["steps"]:
            for n in p["hypotheses"]:
                med = statistics.median(run_once(s, n) for _ in range(3))
                rows.append({"steps": s, "n": n,
                             "ms_per_pose": 1e3 * med})
                click.echo(f"S={s:<3d} N={n:<4d} {1e3 * med:9.3f} ms/pose")
        csv_path, svg_path = report.bench_report(rows, out_dir)
    except (FloatingPointError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {csv_path} and {svg_path}")


if __name__ == "__main__":
    main()

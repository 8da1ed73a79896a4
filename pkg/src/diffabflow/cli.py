"""Command-line interface.

Subcommands: generate-data, train, evaluate, infer, analyze, sweep.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure. The DIFFABFLOW_CACHE environment variable supplies the default
dataset directory.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .config import RunConfig
from .datakit.degrade import DegradationSpec
from .datakit.generate import GenerationConfig, generate_split
from .errors import ConfigError, DataError, NumericError

logging.basicConfig(level=logging.INFO, format="%(message)s")


def _data_root(explicit):
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("DIFFABFLOW_CACHE", "data"))


def _load_config(path, **overrides) -> RunConfig:
    """Precedence: explicit flags > config file > DIFFABFLOW_CACHE > defaults."""
    config = RunConfig.from_json(path) if path else RunConfig()
    if path is None and os.environ.get("DIFFABFLOW_CACHE"):
        config.data.root = os.environ["DIFFABFLOW_CACHE"]
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("modality", "fusion", "seed", "out_dir"):
            setattr(config, key, value)
        elif key == "steps_k":
            config.diffusion.denoise_steps = value
        elif key == "iters_n":
            config.diffusion.decode_iters = value
        elif key == "memory_slots":
            config.model.memory_slots = value
        elif key == "root":
            config.data.root = str(value)
    config.validate()
    return config


@click.group()
def main():
    """Frame-event optical flow with a denoising-diffusion decoder."""


@main.command("generate-data")
@click.option("--out", type=click.Path(), default=None,
              help="Dataset root (default: $DIFFABFLOW_CACHE or ./data).")
@click.option("--split", default="train", show_default=True)
@click.option("--count", default=200, show_default=True)
@click.option("--degradation", default="none", show_default=True,
              type=click.Choice(["none", "high_speed", "low_light"]))
@click.option("--blur-subframes", default=8, show_default=True)
@click.option("--canvas", default=64, show_default=True)
@click.option("--max-displacement", default=8.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def generate_data(out, split, count, degradation, blur_subframes, canvas,
                  max_displacement, seed):
    """Generate a synthetic frame-event-flow split."""
    root = _data_root(out)
    if degradation == "high_speed":
        spec = DegradationSpec.high_speed(blur_subframes)
    elif degradation == "low_light":
        spec = DegradationSpec.low_light()
    else:
        spec = DegradationSpec()
    cfg = GenerationConfig(canvas=(canvas, canvas),
                           max_displacement=max_displacement)
    manifest = generate_split(root, split, count, spec, cfg, global_seed=seed)
    click.echo(f"wrote {count} samples, manifest {manifest}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--modality", type=click.Choice(["frame", "event", "both"]),
              default=None)
@click.option("--fusion",
              type=click.Choice(["attention", "concat", "weighted"]),
              default=None)
@click.option("--steps-K", "steps_k", type=int, default=None)
@click.option("--iters-N", "iters_n", type=int, default=None)
@click.option("--memory-slots", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--data-root", type=click.Path(), default=None)
def train(config_path, modality, fusion, steps_k, iters_n, memory_slots,
          seed, out_dir, data_root):
    """Train a model per the run configuration."""
    from .training import train as run_train

    config = _load_config(config_path, modality=modality, fusion=fusion,
                          steps_k=steps_k, iters_n=iters_n,
                          memory_slots=memory_slots, seed=seed,
                          out_dir=out_dir, root=data_root)
    summary = run_train(config, progress=True)
    click.echo(json.dumps(summary, indent=2))


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--split", default="val", show_default=True)
@click.option("--steps-K", "steps_k", type=int, default=None)
@click.option("--iters-N", "iters_n", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--max-samples", type=int, default=None)
def evaluate(checkpoint, split, steps_k, iters_n, seed, out_dir, max_samples):
    """Evaluate a checkpoint on a split."""
    from .evaluating import evaluate as run_eval

    report = run_eval(checkpoint, split, steps_k, iters_n, out_dir, seed,
                      max_samples)
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("frame0", type=click.Path(exists=True))
@click.argument("frame1", type=click.Path(exists=True))
@click.argument("events", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output flow file path (.flo); a .png sits next to it.")
@click.option("--steps-K", "steps_k", type=int, default=None)
@click.option("--iters-N", "iters_n", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def infer(checkpoint, frame0, frame1, events, out_path, steps_k, iters_n,
          seed):
    """Estimate flow for one frame pair and event file."""
    from .evaluating import infer as run_infer

    path = run_infer(checkpoint, frame0, frame1, events, out_path, steps_k,
                     iters_n, seed)
    click.echo(f"wrote {path} and {Path(path).with_suffix('.png')}")


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--split", default="val", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--clusters", default=4, show_default=True)
@click.option("--bins", default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def analyze(checkpoint, split, out_dir, clusters, bins, seed):
    """Feature clustering and gradient-response diagnostics."""
    from .evaluating import analyze as run_analyze

    summary = run_analyze(checkpoint, split, out_dir, clusters=clusters,
                          bins=bins, seed=seed)
    click.echo(json.dumps(summary, indent=2))


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--split", default="val", show_default=True)
@click.option("--ks", default="1,2,3,4,5", show_default=True,
              help="Comma-separated denoise-step counts.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-samples", type=int, default=None)
def sweep(checkpoint, split, ks, out_dir, seed, max_samples):
    """Evaluate one checkpoint across denoise-step counts."""
    from .evaluating import sweep_denoise_steps

    k_values = [int(v) for v in ks.split(",") if v.strip()]
    summary = sweep_denoise_steps(checkpoint, split, k_values, out_dir, seed,
                                  max_samples)
    click.echo(json.dumps(summary, indent=2))


def run() -> int:
    try:
        main.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        return 2
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(run())

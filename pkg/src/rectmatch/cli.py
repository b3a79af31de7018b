"""Command-line entry points: ``rectmatch run``, ``synth``, ``report``."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import harness, shape_field as sf
from .errors import ManifestError, RectmatchError, StageError
from .synthetic import SCENE_TYPES, SceneSpec, generate_synthetic_pair

EXIT_MANIFEST = 2
EXIT_STAGE = 3


@click.group()
def main():
    """Two-view matching with rectification-based view synthesis."""


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--method", type=click.Choice(harness.METHODS), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--dump-warps", type=click.Path(), default=None)
@click.option("--dump-covering", is_flag=True, default=False)
@click.option("--jobs", type=int, default=1)
@click.option("--plots", is_flag=True, default=False)
def run(manifest_path, method, config_path, out_dir, seed, dump_warps,
        dump_covering, jobs, plots):
    """Evaluate every pair in a manifest and write report files."""
    try:
        if config_path:
            with open(config_path) as f:
                cfg = harness.MethodConfig.from_json_dict(json.load(f))
        else:
            cfg = harness.MethodConfig()
        if method:
            cfg = replace(cfg, method=method)
        if seed is not None:
            cfg = replace(cfg, ransac=replace(cfg.ransac, seed=seed))
        summary = harness.evaluate_dataset(
            manifest_path, cfg, out_dir, jobs=jobs, dump_warps=dump_warps,
            dump_covering=dump_covering, make_plots=plots,
        )
    except ManifestError as e:
        click.echo(f"manifest error: {e}", err=True)
        sys.exit(EXIT_MANIFEST)
    except (StageError, RectmatchError) as e:
        click.echo(f"pipeline error: {e}", err=True)
        sys.exit(EXIT_STAGE)
    click.echo(
        f"{summary['n_pairs']} pairs, accuracy {summary['accuracy']:.3f}"
        f" -> {out_dir}"
    )


@main.command()
@click.option("--scene", type=click.Choice(SCENE_TYPES), default="single_plane")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--tilt", type=float, default=1.0)
@click.option("--orbit-deg", type=float, default=10.0)
@click.option("--size", type=int, default=256)
def synth(scene, out_dir, seed, tilt, orbit_deg, size):
    """Render a synthetic pair with ground truth and write a manifest."""
    from PIL import Image

    try:
        spec = SceneSpec(scene=scene, seed=seed, tilt=tilt, orbit_deg=orbit_deg,
                         width=size, height=size)
        pair = generate_synthetic_pair(spec)
    except RectmatchError as e:
        click.echo(f"scene error: {e}", err=True)
        sys.exit(EXIT_STAGE)
    os.makedirs(out_dir, exist_ok=True)

    def save_img(arr, name):
        Image.fromarray((np.clip(arr, 0, 1) * 255).astype(np.uint8)).save(
            os.path.join(out_dir, name)
        )

    save_img(pair.image_a, "image_a.png")
    save_img(pair.image_b, "image_b.png")
    sf.save_depth_map(pair.depth_a, os.path.join(out_dir, "depth_a.dpth"), pair.K)
    sf.save_depth_map(pair.depth_b, os.path.join(out_dir, "depth_b.dpth"), pair.K)
    sf.save_shape_field(pair.field_a, os.path.join(out_dir, "shapes_a.shpf"))
    sf.save_shape_field(pair.field_b, os.path.join(out_dir, "shapes_b.shpf"))

    gt = {"R": pair.R_rel.tolist(), "t": pair.t_rel.tolist()}
    if pair.H_gt is not None:
        gt["H"] = pair.H_gt.tolist()
    manifest = {
        "pairs": [
            {
                "pair_id": f"{scene}_seed{seed}",
                "image_a": "image_a.png",
                "image_b": "image_b.png",
                "K_a": pair.K.matrix().tolist(),
                "K_b": pair.K.matrix().tolist(),
                "gt": gt,
                "aux": {
                    "depth_a": "depth_a.dpth",
                    "depth_b": "depth_b.dpth",
                    "shapes_a": "shapes_a.shpf",
                    "shapes_b": "shapes_b.shpf",
                },
            }
        ]
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    click.echo(f"wrote {scene} pair -> {out_dir}")


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "plot"]),
              default="json")
def report(in_dir, fmt):
    """Re-emit results from a completed run directory."""
    summary_path = os.path.join(in_dir, "summary.json")
    pairs_path = os.path.join(in_dir, "pairs.csv")
    if not os.path.exists(summary_path) or not os.path.exists(pairs_path):
        click.echo(f"no run results found in {in_dir}", err=True)
        sys.exit(EXIT_MANIFEST)
    if fmt == "json":
        with open(summary_path) as f:
            click.echo(f.read().rstrip())
        return
    if fmt == "csv":
        with open(pairs_path) as f:
            click.echo(f.read().rstrip())
        return
    # plot: rebuild SVG figures from pairs.csv
    import csv as csv_mod

    timings_by_pair = {}
    timings_path = os.path.join(in_dir, "timings.csv")
    if os.path.exists(timings_path):
        with open(timings_path) as f:
            for row in csv_mod.DictReader(f):
                timings_by_pair[row["pair_id"]] = {
                    s: float(row[f"time_{s}"]) for s in harness.STAGES
                }
    evals, cats = [], []
    with open(pairs_path) as f:
        for row in csv_mod.DictReader(f):
            timings = timings_by_pair.get(
                row["pair_id"], {s: 0.0 for s in harness.STAGES}
            )
            stats = harness.RunStats(
                int(row["total_warp_area_px"]), int(row["keypoint_count"]),
                int(row["component_count"]),
                float(row["rectifications_per_component"]),
            )
            evals.append(
                harness.PairEvaluation(
                    row["pair_id"], row["mode"],
                    float(row["error"]) if row["error"] else None,
                    row["accurate"] == "1" if row["accurate"] else None,
                    int(row["n_matches"]), int(row["n_inliers"]), stats, timings,
                )
            )
            cats.append(int(row["category"]) if row["category"] else None)
    harness.write_plots(in_dir, evals, cats)
    click.echo(f"wrote plots -> {in_dir}")


if __name__ == "__main__":
    main()

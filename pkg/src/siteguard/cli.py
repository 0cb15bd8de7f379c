"""Command-line entry points. Exit codes: 0 success, 2 validation, 1 runtime."""

from __future__ import annotations

import json
from pathlib import Path
import sys

import click

from . import dataset as ds
from . import evaluation as ev
from . import pipeline as pl
from .compliance import ComplianceConfig
from .config import AppConfig, build_detector, load_config
from .detection import parse_voc_annotation
from .errors import SiteguardError
from .geometry import CalibrationProfile, ImagePoint
from .imaging import save_image

import numpy as np


def _fail(message: str, as_json: bool, code: int):
    if as_json:
        click.echo(json.dumps({"error": message}))
    else:
        click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn, as_json: bool = False):
    try:
        return fn()
    except (SiteguardError, ValueError, KeyError) as exc:
        _fail(str(exc), as_json, 2)
    except click.ClickException:
        raise
    except Exception as exc:  # runtime failure
        _fail(f"{type(exc).__name__}: {exc}", as_json, 1)


@click.group()
def main():
    """Worksite distancing and mask compliance engine."""


@main.command()
@click.option("--points", "points_file", required=True, type=click.Path(exists=True),
              help="JSON file with the 4 clicked corners [[u,v] x 4] (BL, BR, TR, TL)")
@click.option("--edge-length-ft", default=6.0, show_default=True)
@click.option("--pixels-per-foot", default=100.0, show_default=True)
@click.option("--out", "out_file", default="calibration.json", show_default=True)
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
def calibrate(points_file, edge_length_ft, pixels_per_foot, out_file, as_json):
    """Derive and persist a calibration profile from a corner points file."""

    def body():
        corners = json.loads(Path(points_file).read_text(encoding="utf-8"))
        profile = CalibrationProfile(
            corners=tuple(ImagePoint(float(u), float(v)) for u, v in corners),
            edge_length_ft=edge_length_ft,
            pixels_per_foot=pixels_per_foot,
        )
        profile.save(out_file)
        if as_json:
            click.echo(json.dumps(profile.to_dict()))
        else:
            click.echo(f"calibration written to {out_file}")
            for row in profile.homography.as_list():
                click.echo("  " + "  ".join(f"{v: .6e}" for v in row))

    _guard(body, as_json)


@main.command()
@click.option("--config", "config_file", type=click.Path(), default=None,
              help="TOML or JSON config (or set SITEGUARD_CONFIG)")
@click.option("--source", "source_path", type=click.Path(), default=None)
@click.option("--detector", default=None, help="replay:FILE | command:CMD | tcp:HOST:PORT")
@click.option("--calibration", "calibration_path", type=click.Path(), default=None)
@click.option("--output", "output_dir", type=click.Path(), default=None)
@click.option("--port", type=int, default=None)
def serve(config_file, source_path, detector, calibration_path, output_dir, port):
    """Run the HTTP service (and the pipeline once calibrated)."""

    def body():
        cfg = load_config(config_file).merged(
            source_path=source_path,
            detector=detector,
            calibration_path=calibration_path,
            output_dir=output_dir,
            port=port,
        )
        import uvicorn

        from .service import ServiceEngine, create_app

        engine = ServiceEngine(cfg)
        engine.maybe_start()
        app = create_app(cfg, engine)
        uvicorn.run(app, host="127.0.0.1", port=cfg.port, log_level="warning")

    _guard(body)


def _run_one_fixture(fixture: Path, out_dir: Path, fps: float) -> dict:
    profile = CalibrationProfile.load(fixture / "calibration.json")
    detector = pl.ReplayDetector.load(fixture / "detections.jsonl")

    frames_dir = fixture / "frames"
    if not frames_dir.is_dir():
        # No stored frames: synthesize neutral gray frames for every index.
        frames_dir = out_dir / "synthetic_frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        count = (max(detector.source.frame_indices) + 1) if len(detector.source) else 0
        blank = np.full((480, 640, 3), 96, dtype=np.uint8)
        for i in range(count):
            save_image(frames_dir / f"frame_{i:06d}.png", blank)

    source = pl.ImageDirectorySource(frames_dir, frame_rate_hint=fps)
    cfg = pl.PipelineConfig(
        source=source,
        detector=detector,
        profile=profile,
        compliance=ComplianceConfig(),
        output_dir=out_dir / "frames",
        events_path=out_dir / "events.jsonl",
        metrics_path=out_dir / "metrics.json",
        deterministic_clock=True,
    )
    status, metrics = pl.run(cfg)
    return {"fixture": fixture.name, "status": status, **metrics.summary()}


@main.command()
@click.option("--fixtures", "fixtures_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="replay_out", show_default=True)
@click.option("--fps", default=30.0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def replay(fixtures_dir, out_dir, fps, as_json):
    """Run the pipeline over replay fixtures (deterministic clock)."""

    def body():
        root = Path(fixtures_dir)
        out = Path(out_dir)
        if (root / "detections.jsonl").exists():
            fixtures = [root]
        else:
            fixtures = sorted(
                p for p in root.iterdir() if (p / "detections.jsonl").exists()
            )
        if not fixtures:
            raise SiteguardError(f"no replay fixtures under {root}")
        reports = [_run_one_fixture(f, out / f.name, fps) for f in fixtures]
        if as_json:
            click.echo(json.dumps(reports))
        else:
            for r in reports:
                click.echo(
                    f"{r['fixture']}: {r['frames_processed']} frames,"
                    f" {r['events_emitted']} events"
                )

    _guard(body, as_json)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--target", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--json", "as_json", is_flag=True)
def augment(in_dir, out_dir, target, seed, as_json):
    """Balance every face class up to the target instance count."""

    def body():
        data = ds.load_annotated_directory(in_dir)
        before = ds.class_counts(data)
        plan = ds.balance_plan(before, target)
        augmented, manifest = ds.run_balancing(data, plan, seed)
        new_images = augmented[len(data):]
        ds.save_augmented(out_dir, new_images, manifest)
        after = ds.class_counts(augmented)
        report = {
            "target": target,
            "before": {k.value: v for k, v in before.items()},
            "needed": {k.value: v for k, v in plan.needed.items()},
            "after": {k.value: v for k, v in after.items()},
            "total_instances": sum(after.values()),
            "generated_images": len(new_images),
        }
        if as_json:
            click.echo(json.dumps(report))
        else:
            click.echo(f"generated {len(new_images)} images -> {out_dir}")
            for key in report["after"]:
                click.echo(
                    f"  {key}: {report['before'][key]} -> {report['after'][key]}"
                )
            click.echo(f"  total instances: {report['total_instances']}")

    _guard(body, as_json)


@main.command("eval")
@click.option("--preds", "preds_file", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True))
@click.option("--confidence-floor", default=0.8, show_default=True)
@click.option("--iou", "iou_threshold", default=0.5, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def eval_cmd(preds_file, gt_dir, confidence_floor, iou_threshold, as_json):
    """Score a predictions file against a directory of VOC annotations."""

    def body():
        preds = ev.load_predictions(preds_file)
        gts = {}
        for xml_path in sorted(Path(gt_dir).glob("*.xml")):
            gts[xml_path.stem] = parse_voc_annotation(xml_path.read_text(encoding="utf-8"))
        if not gts:
            raise SiteguardError(f"no VOC annotations under {gt_dir}")
        cfg = ev.EvalConfig(confidence_floor=confidence_floor, iou_threshold=iou_threshold)
        report = ev.evaluate_dataset(preds, gts, cfg)
        if as_json:
            click.echo(json.dumps(report))
        else:
            click.echo(ev.format_report(report))
            click.echo(f"accuracy {report['accuracy']:.3f}")

    _guard(body, as_json)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--ratio", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", default=".", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def split(in_dir, ratio, seed, out_dir, as_json):
    """Seeded train/test file split over a directory of annotations."""

    def body():
        files = sorted(p.name for p in Path(in_dir).glob("*.xml"))
        if not files:
            raise SiteguardError(f"no VOC annotations under {in_dir}")
        train, test = ds.split_files(files, ratio=ratio, seed=seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train.txt").write_text("\n".join(train) + "\n", encoding="utf-8")
        (out / "test.txt").write_text("\n".join(test) + "\n", encoding="utf-8")
        report = {"train": len(train), "test": len(test), "seed": seed, "ratio": ratio}
        if as_json:
            click.echo(json.dumps(report))
        else:
            click.echo(f"train {len(train)} / test {len(test)} -> {out}")

    _guard(body, as_json)


if __name__ == "__main__":
    main()

"""Command-line entry points.

Exit codes: 0 success, 1 error, 2 dataset-validation findings — so CI can
gate on validation. Every randomized command requires an explicit --seed;
nothing is ever seeded from the clock.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import dataset_io
from .annotations import AnnotationError, load_class_names, split_dataset, validate_dataset
from .augment import AugmentationSpec, balance_dataset, draw_params, transform_pixels
from .detect import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    BackendError,
    OracleBackend,
    load_backend,
)
from .frames import FrameRecord
from .metrics import EvalReport, UnknownImage, evaluate
from .runtime.recording import CorruptArtifact, RecordingReplaySource, load_sidecar_log
from .runtime.server import ControlServer
from .runtime.session import BackendFailure, PipelineService, RunConfig
from .runtime.sources import SourceUnavailable
from .tracking import Tracker

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2

_USER_ERRORS = (
    AnnotationError,
    BackendError,
    BackendFailure,
    CorruptArtifact,
    SourceUnavailable,
    UnknownImage,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_ERROR)


@click.group()
@click.version_option()
def main():
    """Detection pipeline toolkit: validate, split, augment, evaluate, run,
    replay and report."""


@main.command()
@click.option("--dataset", required=True, type=click.Path(path_type=Path), help="Dataset directory (images + label files).")
@click.option("--labels", required=True, type=click.Path(path_type=Path), help="Class names file, one per line.")
def validate(dataset: Path, labels: Path):
    """Check image/label pairing and report class balance."""
    try:
        names = load_class_names(labels)
        ds = dataset_io.load_dataset(dataset, names)
        report = validate_dataset(ds, dataset)
    except _USER_ERRORS as e:
        _fail(str(e))
    for finding in report.findings:
        click.echo(str(finding))
    for class_id, count in sorted(report.class_box_counts.items()):
        click.echo(f"boxes[{names[class_id]}] = {count}")
    if report.imbalance_ratio is not None:
        click.echo(f"imbalance_ratio = {report.imbalance_ratio:.2f}")
    click.echo(f"{len(report.findings)} finding(s)")
    sys.exit(EXIT_FINDINGS if report.findings else EXIT_OK)


@main.command()
@click.option("--dataset", required=True, type=click.Path(path_type=Path))
@click.option("--labels", required=True, type=click.Path(path_type=Path))
@click.option("--test-fraction", default=0.2, show_default=True, type=float)
@click.option("--seed", required=True, type=int, help="Split shuffle seed (required: no clock seeding).")
@click.option("--out", required=True, type=click.Path(path_type=Path), help="Directory for train.txt / test.txt id lists.")
def split(dataset: Path, labels: Path, test_fraction: float, seed: int, out: Path):
    """Assign images to train/test, stratified by dominant class."""
    try:
        names = load_class_names(labels)
        ds = dataset_io.load_dataset(dataset, names)
        result = split_dataset(ds, test_fraction, seed)
    except _USER_ERRORS as e:
        _fail(str(e))
    out.mkdir(parents=True, exist_ok=True)
    for side in ("train", "test"):
        ids = sorted(a.image_id for a in result.subset(side))
        (out / f"{side}.txt").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
        click.echo(f"{side}: {len(ids)} images")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--dataset", required=True, type=click.Path(path_type=Path))
@click.option("--labels", required=True, type=click.Path(path_type=Path))
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--target-ratio", default=2.0, show_default=True, type=float, help="Stop once max/min class box counts reach this ratio.")
@click.option("--flip-prob", default=0.5, show_default=True, type=float)
@click.option("--brightness", default=24.0, show_default=True, type=float)
@click.option("--noise-sigma", default=4.0, show_default=True, type=float)
@click.option("--crop-fraction", default=0.1, show_default=True, type=float)
def augment(dataset: Path, labels: Path, seed: int, out: Path, target_ratio: float,
            flip_prob: float, brightness: float, noise_sigma: float, crop_fraction: float):
    """Balance the dataset by writing augmented copies of minority-class
    images, with a manifest mapping source ids to augmented ids."""
    try:
        names = load_class_names(labels)
        ds = dataset_io.load_dataset(dataset, names)
        spec = AugmentationSpec(
            horizontal_flip=flip_prob,
            brightness_delta=brightness,
            gaussian_noise_sigma=noise_sigma,
            crop_fraction=crop_fraction,
            seed=seed,
        )
        result = balance_dataset(ds, spec, target_ratio)
    except _USER_ERRORS as e:
        _fail(str(e))

    from PIL import Image
    import numpy as np

    out.mkdir(parents=True, exist_ok=True)
    by_id = ds.by_id()
    new_by_id = result.dataset.by_id()
    for addition in result.additions:
        src_path = _find_image(dataset, addition.source_id)
        if src_path is None:
            _fail(f"source image for {addition.source_id!r} disappeared")
        with Image.open(src_path) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        params = draw_params(spec, addition.draw)
        new_pixels = transform_pixels(pixels, params, spec, addition.draw)
        dataset_io.write_annotation(out, new_by_id[addition.new_id], new_pixels)
    (out / "manifest.json").write_text(
        json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"wrote {len(result.additions)} augmented image(s) to {out}")
    if result.cap_reached:
        click.echo("copy cap reached before target ratio", err=True)
    sys.exit(EXIT_OK)


def _find_image(root: Path, image_id: str) -> Path | None:
    from .annotations import IMAGE_EXTENSIONS

    for ext in IMAGE_EXTENSIONS:
        p = root / f"{image_id}{ext}"
        if p.is_file():
            return p
    return None


@main.command("evaluate")
@click.option("--dataset", required=True, type=click.Path(path_type=Path))
@click.option("--labels", required=True, type=click.Path(path_type=Path))
@click.option("--detections", type=click.Path(path_type=Path), help="Detections JSON file; mutually exclusive with --backend.")
@click.option("--backend", type=click.Path(path_type=Path), help="Backend descriptor to run over the dataset ground truth.")
@click.option("--iou-thresholds", default="0.5,0.75", show_default=True, help="Comma-separated IoU matching thresholds.")
@click.option("--conf-threshold", default=DEFAULT_CONFIDENCE_THRESHOLD, show_default=True, type=float)
@click.option("--seed", type=int, default=None, help="Required with --backend (oracle draws).")
@click.option("--fps", type=float, default=None, help="Optional measured FPS to stamp into the report.")
@click.option("--out", type=click.Path(path_type=Path), help="Directory for report.json / report.txt.")
def evaluate_cmd(dataset: Path, labels: Path, detections: Path | None, backend: Path | None,
                 iou_thresholds: str, conf_threshold: float, seed: int | None,
                 fps: float | None, out: Path | None):
    """Evaluate detections against dataset ground truth (AP, mAP, TP/FP/FN,
    average IoU)."""
    try:
        names = load_class_names(labels)
        ds = dataset_io.load_dataset(dataset, names)
        thresholds = tuple(float(t) for t in iou_thresholds.split(","))
        if (detections is None) == (backend is None):
            raise ValueError("provide exactly one of --detections or --backend")
        network = "detections-file"
        if detections is not None:
            dets_by_image = dataset_io.load_detections_file(detections)
        else:
            be = load_backend(backend, expected_class_names=names)
            network = be.name
            if isinstance(be, OracleBackend):
                if seed is None:
                    raise ValueError("--seed is required with an oracle backend")
                be = OracleBackend(dataclasses.replace(be.config, seed=seed), be.input_size)
            dets_by_image = {}
            for idx, ann in enumerate(sorted(ds.annotations, key=lambda a: a.image_id)):
                frame = FrameRecord(idx, 0, ann.image_width, ann.image_height, truths=ann.boxes)
                dets_by_image[ann.image_id] = be.detect(frame)
        report = evaluate(dets_by_image, ds, thresholds, conf_threshold, fps=fps, network=network)
        findings = validate_dataset(ds, dataset).findings
    except _USER_ERRORS as e:
        _fail(str(e))
    click.echo(report.render_text())
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.render_text() + "\n", encoding="utf-8")
    for finding in findings:
        click.echo(f"validation: {finding}", err=True)
    sys.exit(EXIT_FINDINGS if findings else EXIT_OK)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path), help="Run configuration JSON.")
@click.option("--headless", is_flag=True, help="Disable the control/streaming listener.")
@click.option("--listen", default=None, help="Listener address, host:port (overrides config).")
@click.option("--console-root", type=click.Path(path_type=Path), default=None, help="Static console bundle to serve over HTTP.")
@click.option("--conf-threshold", type=float, default=None, help="Override the config's confidence threshold.")
@click.option("--nms-threshold", type=float, default=None, help="Override the config's NMS IoU threshold.")
def run(config_path: Path, headless: bool, listen: str | None, console_root: Path | None,
        conf_threshold: float | None, nms_threshold: float | None):
    """Run a live session: source -> detect -> filter/NMS -> track/count."""
    try:
        config = RunConfig.from_file(config_path)
        if conf_threshold is not None:
            config.confidence_threshold = conf_threshold
        if nms_threshold is not None:
            config.nms_threshold = nms_threshold
        service = PipelineService(config)
    except _USER_ERRORS as e:
        _fail(str(e))

    server = None
    if not headless:
        host, port = _parse_listen(listen)
        server = ControlServer(service, host, port, static_root=console_root)
        server.start()
        click.echo(f"listening on {server.address[0]}:{server.address[1]}")
    try:
        service.handle_control("start")
        artifact = service.wait()
    finally:
        service.close()
        if server:
            server.close()
    if artifact is None:
        _fail("session never produced an artifact")
    click.echo(f"frames processed: {artifact.frames_processed} (dropped {artifact.frames_dropped})")
    click.echo(f"counts: {artifact.counts_cumulative or {}}")
    click.echo(f"fps: {artifact.fps:.1f}")
    for frame_id, rule in artifact.alerts:
        click.echo(f"alert {rule} at frame {frame_id}")
    if artifact.error:
        _fail(artifact.error)
    sys.exit(EXIT_OK)


def _parse_listen(listen: str | None) -> tuple[str, int]:
    if not listen:
        return "127.0.0.1", 0
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


@main.command()
@click.option("--artifact", "artifact_dir", required=True, type=click.Path(path_type=Path), help="RunArtifact directory containing a recording.")
@click.option("--speed", default=1.0, show_default=True, type=float, help="Replay rate multiplier.")
@click.option("--recording", "recording_name", default=None, help="Recording file name inside the artifact (default: first).")
def replay(artifact_dir: Path, speed: float, recording_name: str | None):
    """Re-run a recorded session through the tracker and verify the stored
    counts are reproduced."""
    try:
        recording = _locate_recording(artifact_dir, recording_name)
        sidecar = recording.with_suffix(recording.suffix + ".log")
        if not sidecar.is_file():
            raise CorruptArtifact(f"missing sidecar log {sidecar}")
        detections_by_frame = load_sidecar_log(sidecar)
        source = RecordingReplaySource(recording, speed=speed)
        summary = json.loads((artifact_dir / "summary.json").read_text(encoding="utf-8"))

        tracker = Tracker()
        last_counts: dict[str, int] = {}
        names = source.class_names
        for frame in source.frames():
            update = tracker.update(detections_by_frame.get(frame.frame_id, []), frame.frame_id)
            last_counts = {
                names[c] if c < len(names) else f"class{c}": n
                for c, n in sorted(update.cumulative_counts.items())
            }
    except _USER_ERRORS as e:
        _fail(str(e))
    click.echo(f"replayed {recording.name} at {speed:g}x; counts: {last_counts}")
    stored = summary.get("counts_total", {})
    if stored and stored != last_counts:
        _fail(f"replay counts {last_counts} do not match stored counts {stored}")
    sys.exit(EXIT_OK)


def _locate_recording(artifact_dir: Path, name: str | None) -> Path:
    if name:
        path = artifact_dir / name
        if not path.is_file():
            raise CorruptArtifact(f"recording {path} not found")
        return path
    candidates = sorted(artifact_dir.glob("recording_*.jsonl"))
    if not candidates:
        raise CorruptArtifact(f"no recording in {artifact_dir}")
    return candidates[0]


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(path_type=Path), help="report.json produced by evaluate or run.")
@click.option("--network", default=None, help="Override the network name column.")
@click.option("--fps", type=float, default=None, help="Override the FPS column.")
def report(report_path: Path, network: str | None, fps: float | None):
    """Render a stored evaluation report as text, including the model
    summary table."""
    try:
        rep = EvalReport.from_json(report_path.read_text(encoding="utf-8"))
    except _USER_ERRORS as e:
        _fail(str(e))
    if network:
        rep.network = network
    if fps is not None:
        rep.fps = fps
    click.echo(rep.render_text())
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()

"""Command-line entry point tying the pipeline together: dataset
synthesis, two-phase training, saliency map extraction, aggregation of
classifier and human heatmaps, and the annotation service.
"""

from __future__ import annotations

import glob
import json
import os

import click
import numpy as np

from . import annotation, checkpoint_io, comparison, render, saliency, training


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


@click.group()
def main():
    """Facial saliency workbench."""


@main.command(name="synth")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Dataset directory to create.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-per-class", type=int, default=20, show_default=True)
@click.option("--test-per-class", type=int, default=5, show_default=True)
def synth_cmd(out, seed, train_per_class, test_per_class):
    """Generate the bundled synthetic 4-class blob dataset."""
    train_ds, test_ds = training.synthetic_dataset(seed, train_per_class, test_per_class)
    training.write_dataset(out, train_ds, test_ds)
    click.echo(f"wrote {len(train_ds)} train / {len(test_ds)} test images to {out}",
               err=True)


@main.command(name="train")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False),
              help="Dataset root (class dirs + manifest).")
@click.option("--arch", type=click.Path(exists=True, dir_okay=False),
              help="Architecture file for a fresh start.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False),
              help="Checkpoint to continue from.")
@click.option("--phase", type=click.Choice(training.PHASES), default="heads_only",
              show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--decay", type=float, default=0.0, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def train_cmd(data, arch, resume, phase, lr, decay, epochs, batch_size, seed, out):
    """Train a classifier; writes a checkpoint and an NDJSON epoch log."""
    if (arch is None) == (resume is None):
        raise click.UsageError("pass exactly one of --arch or --resume")
    try:
        dataset = training.load_dataset(data, "train")
        if resume is not None:
            start = checkpoint_io.load_checkpoint(resume)
        else:
            start = checkpoint_io.load_arch(arch)
        config = training.TrainConfig(learning_rate=lr, weight_decay=decay,
                                      epochs=epochs, batch_size=batch_size,
                                      phase=phase, seed=seed)
        log_path = f"{out}.log"
        with open(log_path, "w", encoding="utf-8") as log:
            def on_epoch(entry):
                log.write(json.dumps(entry) + "\n")
                click.echo(f"epoch {entry['epoch']}: loss {entry['loss']:.4f} "
                           f"acc {entry['accuracy']:.3f}", err=True)
            result = training.train(dataset, start, config, on_epoch=on_epoch)
        checkpoint_io.save_checkpoint(result, out)
    except (OSError, ValueError, training.TrainingDivergedError) as exc:
        raise _fail(exc) from exc
    click.echo(f"checkpoint written to {out} (log: {log_path})", err=True)


def _resolve_class(value: str, names: list[str] | None, class_count: int) -> int:
    try:
        index = int(value)
    except ValueError:
        if names is not None and value in names:
            return names.index(value)
        raise click.ClickException(f"unknown class name {value!r}") from None
    if not 0 <= index < class_count:
        raise click.ClickException(f"class index {index} out of range "
                                   f"[0, {class_count})")
    return index


@main.command(name="saliency")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--class", "class_spec", required=True,
              help="Target class index or name (with --names).")
@click.option("--diff-class", "diff_spec", default=None,
              help="Second class: write the rectified saliency difference.")
@click.option("--mask-top", type=float, default=None,
              help="Also write a top-fraction mask overlay PNG.")
@click.option("--names", "names_path", type=click.Path(exists=True, dir_okay=False),
              help="Optional class-name file, one name per line.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Output PGM path (JSON sidecar written alongside).")
def saliency_cmd(model, image_path, class_spec, diff_spec, mask_top, names_path, out):
    """Write a saliency map (or class-pair difference) for one image."""
    try:
        checkpoint = checkpoint_io.load_checkpoint(model)
        image = training.load_image(image_path)
    except (OSError, ValueError) as exc:
        raise _fail(exc) from exc
    names = None
    if names_path is not None:
        with open(names_path, encoding="utf-8") as fh:
            names = [line.strip() for line in fh if line.strip()]
    k = checkpoint.spec.class_count
    y = _resolve_class(class_spec, names, k)
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    try:
        if diff_spec is not None:
            z = _resolve_class(diff_spec, names, k)
            if z == y:
                raise click.UsageError("--diff-class must differ from --class")
            values = saliency.saliency_difference(checkpoint, image, y, z)
            smap = saliency.SaliencyMap(image_id, y, values)
        else:
            smap = saliency.gb_map(checkpoint, image, y, image_id=image_id)
        saliency.save_map(smap, out)
        if mask_top is not None:
            mask = saliency.mask_top_fraction(smap.values, mask_top)
            render.overlay_png(mask, f"{out}.overlay.png", source=image)
    except ValueError as exc:
        raise _fail(exc) from exc
    click.echo(f"saliency map written to {out}", err=True)


def _parse_size(size: str) -> tuple[int, int]:
    try:
        w, h = (int(part) for part in size.lower().split("x"))
    except ValueError:
        raise click.UsageError(f"--size must look like 64x64, got {size!r}") from None
    if w < 1 or h < 1:
        raise click.UsageError("--size dimensions must be positive")
    return w, h


def _load_maps(maps_dir: str, person: str | None) -> list[saliency.SaliencyMap]:
    paths = sorted(glob.glob(os.path.join(maps_dir, "*.pgm")))
    maps = [saliency.load_map(p) for p in paths]
    if person is not None and person.isdigit():
        maps = [m for m in maps if m.class_id == int(person)]
    if not maps:
        raise click.ClickException(f"no saliency maps for person {person!r} "
                                   f"in {maps_dir}")
    return maps


def _person_records(store: str, person: str) -> list[annotation.AnnotationRecord]:
    records = [r for r in annotation.read_records(store) if r.person_id == person]
    if not records:
        raise click.ClickException(f"no annotation records for person {person!r}")
    return records


@main.command(name="aggregate")
@click.option("--maps-dir", type=click.Path(exists=True, file_okay=False),
              help="Directory of saliency PGM+JSON pairs.")
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False),
              help="Annotation store (NDJSON).")
@click.option("--person", default=None, help="Person id (class id for maps).")
@click.option("--mode", required=True,
              type=click.Choice(["classifier", "human", "relative", "compare"]))
@click.option("--size", default=None, help="Image size WxH for box heatmaps.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def aggregate_cmd(maps_dir, annotations, person, mode, size, out):
    """Aggregate saliency maps and/or human boxes into heatmap artifacts."""
    os.makedirs(out, exist_ok=True)
    try:
        if mode == "classifier":
            if maps_dir is None:
                raise click.UsageError("classifier mode needs --maps-dir")
            _aggregate_classifier(maps_dir, person, out)
        elif mode == "human":
            if annotations is None or person is None or size is None:
                raise click.UsageError("human mode needs --annotations, --person "
                                       "and --size")
            _aggregate_human(annotations, person, _parse_size(size), out)
        elif mode == "relative":
            _aggregate_relative(maps_dir, annotations, person, size, out)
        else:
            if None in (maps_dir, annotations, person, size):
                raise click.UsageError("compare mode needs --maps-dir, "
                                       "--annotations, --person and --size")
            _aggregate_compare(maps_dir, annotations, person, _parse_size(size), out)
    except (OSError, ValueError) as exc:
        raise _fail(exc) from exc
    click.echo(f"aggregation artifacts written to {out}", err=True)


def _aggregate_classifier(maps_dir, person, out):
    maps = _load_maps(maps_dir, person)
    heatmap, highlight = saliency.class_saliency_heatmap(maps)
    render.heatmap_png(heatmap, os.path.join(out, "classifier_heatmap.png"))
    render.overlay_png(highlight, os.path.join(out, "classifier_highlight.png"))
    _write_json(os.path.join(out, "classifier.json"),
                {"maps": len(maps), "p_filter": 0.05, "p_highlight": 0.05,
                 "highlight_pixels": highlight.count()})


def _aggregate_human(annotations, person, size, out):
    records = _person_records(annotations, person)
    counts, highlight = annotation.bbox_heatmap(records, size)
    render.heatmap_png(counts, os.path.join(out, "human_heatmap.png"))
    render.overlay_png(highlight, os.path.join(out, "human_highlight.png"))
    histogram = annotation.balanced_label_histogram(annotation.read_records(annotations))
    _write_json(os.path.join(out, "histogram.json"), histogram)
    with open(os.path.join(out, "histogram.csv"), "w", encoding="utf-8") as fh:
        fh.write("label,weight\n")
        for label, weight in histogram.items():
            fh.write(f"{label},{weight!r}\n")
    _write_json(os.path.join(out, "human.json"),
                {"records": len(records), "highlight_percentile": 90,
                 "highlight_pixels": int(highlight.sum())})


def _aggregate_relative(maps_dir, annotations, person, size, out):
    if person is None:
        raise click.UsageError("relative mode needs --person")
    if (maps_dir is None) == (annotations is None):
        raise click.UsageError("relative mode needs exactly one of --maps-dir "
                               "or --annotations")
    if annotations is not None:
        if size is None:
            raise click.UsageError("relative mode over annotations needs --size")
        records = annotation.read_records(annotations)
        if not records:
            raise click.ClickException("annotation store is empty")
        persons = sorted({r.person_id for r in records})
        heatmaps = {p: annotation.bbox_heatmap(
            [r for r in records if r.person_id == p], _parse_size(size))[0]
            for p in persons}
        if person not in heatmaps:
            raise click.ClickException(f"no records for person {person!r}")
        fraction = comparison.HUMAN_TOP_FRACTION
        individual = heatmaps[person].astype(np.float64)
        average = comparison.average_heatmap(list(heatmaps.values()))
    else:
        maps = _load_maps(maps_dir, None)
        classes = sorted({m.class_id for m in maps})
        heatmaps = {c: saliency.class_saliency_heatmap(
            [m for m in maps if m.class_id == c])[0] for c in classes}
        if not person.isdigit() or int(person) not in heatmaps:
            raise click.ClickException(f"no maps for class {person!r}")
        fraction = comparison.CLASSIFIER_TOP_FRACTION
        individual = heatmaps[int(person)]
        average = comparison.average_heatmap(list(heatmaps.values()))
    diff, highlight = comparison.relative_heatmap(individual, average, fraction)
    render.heatmap_png(diff, os.path.join(out, "relative_heatmap.png"))
    render.overlay_png(highlight, os.path.join(out, "relative_highlight.png"))
    _write_json(os.path.join(out, "relative.json"),
                {"person": person, "top_fraction": fraction,
                 "diff_sum": float(diff.sum(dtype=np.float64))})


def _aggregate_compare(maps_dir, annotations, person, size, out):
    maps = _load_maps(maps_dir, person)
    _, classifier_highlight = saliency.class_saliency_heatmap(maps)
    records = _person_records(annotations, person)
    _, human_highlight = annotation.bbox_heatmap(records, size)
    if classifier_highlight.shape != human_highlight.shape:
        raise click.ClickException(
            f"map shape {classifier_highlight.shape} does not match "
            f"--size {human_highlight.shape}")
    score = comparison.overlap_score(human_highlight, classifier_highlight)
    inter = int(np.logical_and(human_highlight.astype(bool),
                               classifier_highlight.bits.astype(bool)).sum())
    union = int(np.logical_or(human_highlight.astype(bool),
                              classifier_highlight.bits.astype(bool)).sum())
    render.overlay_png(classifier_highlight,
                       os.path.join(out, "classifier_highlight.png"))
    render.overlay_png(human_highlight, os.path.join(out, "human_highlight.png"))
    _write_json(os.path.join(out, "overlap.json"),
                {"person": person, "overlap": score, "intersection": inter,
                 "union": union,
                 "human_pixels": int(human_highlight.sum()),
                 "classifier_pixels": classifier_highlight.count()})


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@main.command(name="serve")
@click.option("--listen", default="127.0.0.1:8000", show_default=True,
              help="host:port to bind.")
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--store", required=True, type=click.Path(dir_okay=False))
@click.option("--labels-file", type=click.Path(exists=True, dir_okay=False),
              help="Override label list, one label per line.")
@click.option("--frontend", type=click.Path(exists=True, file_okay=False),
              help="Compiled frontend assets to mount at /.")
def serve_cmd(listen, images, store, labels_file, frontend):
    """Run the annotation service until terminated."""
    import uvicorn

    from .service import create_app, scan_image_pool

    try:
        host, _, port_text = listen.rpartition(":")
        port = int(port_text)
    except ValueError:
        raise click.UsageError(f"--listen must look like host:port, got {listen!r}") \
            from None
    if not host:
        raise click.UsageError(f"--listen must look like host:port, got {listen!r}")
    if not scan_image_pool(images):
        raise click.ClickException(f"image pool {images} has no PNG images")
    labels = None
    if labels_file is not None:
        with open(labels_file, encoding="utf-8") as fh:
            labels = [line.strip() for line in fh if line.strip()]
    app = create_app(images, store, labels=labels, frontend_dir=frontend)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

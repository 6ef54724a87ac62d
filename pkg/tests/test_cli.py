import json
import math
import os

import numpy as np
import pytest
from click.testing import CliRunner

from facesal import annotation, checkpoint_io, cli, saliency, training
from facesal.annotation import AnnotationRecord

ARCH_TEXT = """\
# tiny blob classifier
input c=1 h=16 w=16
conv k=4 c=1 kh=3 kw=3 stride=2 pad=1 trainable=0
relu
maxpool window=2
flatten
dense units=4 trainable=1
softmax
"""


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared dataset, arch file, and trained checkpoint for CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    res = runner.invoke(cli.main, ["synth", "--out", str(root / "data"),
                                   "--seed", "5", "--train-per-class", "3",
                                   "--test-per-class", "1"])
    assert res.exit_code == 0, res.output
    (root / "net.arch").write_text(ARCH_TEXT)
    res = runner.invoke(cli.main, [
        "train", "--data", str(root / "data"), "--arch", str(root / "net.arch"),
        "--epochs", "2", "--batch-size", "4", "--seed", "3",
        "--out", str(root / "model.ckpt")])
    assert res.exit_code == 0, res.output
    (root / "names.txt").write_text("class0\nclass1\nclass2\nclass3\n")
    return root


def first_image(workdir):
    manifest = (workdir / "data" / "manifest.ndjson").read_text().splitlines()
    entry = json.loads(manifest[0])
    return workdir / "data" / entry["class"] / f"{entry['image_id']}.png"


class TestSynth:
    def test_layout_and_counts(self, workdir):
        lines = (workdir / "data" / "manifest.ndjson").read_text().splitlines()
        assert len(lines) == 4 * (3 + 1)
        splits = [json.loads(line)["split"] for line in lines]
        assert splits.count("train") == 12 and splits.count("test") == 4
        for name in ("class0", "class1", "class2", "class3"):
            assert (workdir / "data" / name).is_dir()

    def test_deterministic(self, runner, tmp_path, workdir):
        res = runner.invoke(cli.main, ["synth", "--out", str(tmp_path / "d2"),
                                       "--seed", "5", "--train-per-class", "3",
                                       "--test-per-class", "1"])
        assert res.exit_code == 0
        assert ((tmp_path / "d2" / "manifest.ndjson").read_bytes()
                == (workdir / "data" / "manifest.ndjson").read_bytes())
        sample = first_image(workdir)
        twin = tmp_path / "d2" / sample.parent.name / sample.name
        assert twin.read_bytes() == sample.read_bytes()


class TestTrain:
    def test_writes_checkpoint_sidecar_and_log(self, workdir):
        assert (workdir / "model.ckpt").exists()
        assert (workdir / "model.ckpt.arch").exists()
        log_lines = (workdir / "model.ckpt.log").read_text().splitlines()
        assert len(log_lines) == 2
        entry = json.loads(log_lines[0])
        assert set(entry) == {"epoch", "loss", "accuracy"}

    def test_same_seed_reruns_byte_identical(self, runner, tmp_path, workdir):
        args = ["train", "--data", str(workdir / "data"),
                "--arch", str(workdir / "net.arch"), "--epochs", "2",
                "--batch-size", "4", "--seed", "3"]
        res = runner.invoke(cli.main, args + ["--out", str(tmp_path / "a.ckpt")])
        assert res.exit_code == 0, res.output
        assert ((tmp_path / "a.ckpt").read_bytes()
                == (workdir / "model.ckpt").read_bytes())

    def test_zero_epochs_keeps_init(self, runner, tmp_path, workdir):
        res = runner.invoke(cli.main, [
            "train", "--data", str(workdir / "data"),
            "--arch", str(workdir / "net.arch"), "--epochs", "0",
            "--batch-size", "4", "--seed", "7",
            "--out", str(tmp_path / "z.ckpt")])
        assert res.exit_code == 0, res.output
        got = checkpoint_io.load_checkpoint(tmp_path / "z.ckpt")
        spec = checkpoint_io.parse_arch(ARCH_TEXT)
        want = training.train(
            training.load_dataset(workdir / "data", "train"), spec,
            training.TrainConfig(learning_rate=0.1, weight_decay=0.0, epochs=0,
                                 batch_size=4, phase="heads_only", seed=7))
        for a, b in zip(got.params, want.params):
            if a is None:
                assert b is None
                continue
            for key in a:
                assert a[key].tobytes() == b[key].tobytes()

    def test_resume_end_to_end(self, runner, tmp_path, workdir):
        res = runner.invoke(cli.main, [
            "train", "--data", str(workdir / "data"),
            "--resume", str(workdir / "model.ckpt"), "--phase", "end_to_end",
            "--epochs", "1", "--batch-size", "4",
            "--out", str(tmp_path / "ft.ckpt")])
        assert res.exit_code == 0, res.output
        before = checkpoint_io.load_checkpoint(workdir / "model.ckpt")
        after = checkpoint_io.load_checkpoint(tmp_path / "ft.ckpt")
        assert (after.params[0]["w"] != before.params[0]["w"]).any()

    def test_arch_and_resume_mutually_exclusive(self, runner, workdir):
        res = runner.invoke(cli.main, [
            "train", "--data", str(workdir / "data"),
            "--arch", str(workdir / "net.arch"),
            "--resume", str(workdir / "model.ckpt"),
            "--out", "x.ckpt"])
        assert res.exit_code == 2
        assert "exactly one" in res.output


class TestSaliencyCommand:
    def test_writes_map_and_sidecar(self, runner, tmp_path, workdir):
        image = first_image(workdir)
        out = tmp_path / "map.pgm"
        res = runner.invoke(cli.main, [
            "saliency", "--model", str(workdir / "model.ckpt"),
            "--image", str(image), "--class", "2", "--out", str(out)])
        assert res.exit_code == 0, res.output
        loaded = saliency.load_map(out)
        assert loaded.shape == (16, 16)
        assert loaded.class_id == 2
        assert loaded.image_id == image.stem

    def test_class_name_resolution(self, runner, tmp_path, workdir):
        image = first_image(workdir)
        res = runner.invoke(cli.main, [
            "saliency", "--model", str(workdir / "model.ckpt"),
            "--image", str(image), "--class", "class3",
            "--names", str(workdir / "names.txt"),
            "--out", str(tmp_path / "named.pgm")])
        assert res.exit_code == 0, res.output
        assert saliency.load_map(tmp_path / "named.pgm").class_id == 3

    def test_difference_map_and_overlay(self, runner, tmp_path, workdir):
        image = first_image(workdir)
        out = tmp_path / "diff.pgm"
        res = runner.invoke(cli.main, [
            "saliency", "--model", str(workdir / "model.ckpt"),
            "--image", str(image), "--class", "0", "--diff-class", "1",
            "--mask-top", "0.05", "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert out.exists()
        assert (tmp_path / "diff.pgm.overlay.png").exists()

    def test_equal_diff_class_rejected(self, runner, tmp_path, workdir):
        res = runner.invoke(cli.main, [
            "saliency", "--model", str(workdir / "model.ckpt"),
            "--image", str(first_image(workdir)), "--class", "1",
            "--diff-class", "1", "--out", str(tmp_path / "x.pgm")])
        assert res.exit_code == 2

    def test_class_index_out_of_range(self, runner, tmp_path, workdir):
        res = runner.invoke(cli.main, [
            "saliency", "--model", str(workdir / "model.ckpt"),
            "--image", str(first_image(workdir)), "--class", "9",
            "--out", str(tmp_path / "x.pgm")])
        assert res.exit_code == 1
        assert "out of range" in res.output


def write_maps(maps_dir, class_id=7, count=3):
    """Identical 16x16 maps whose top 5% (13 pixels) are flat cells 0..12."""
    maps_dir.mkdir(parents=True, exist_ok=True)
    values = (255.0 - np.arange(256.0)).reshape(16, 16).astype(np.float32)
    for i in range(count):
        saliency.save_map(
            saliency.SaliencyMap(f"img{i}", class_id, values),
            maps_dir / f"m{i}.pgm")
    return {divmod(i, 16) for i in range(13)}  # (y, x) of the hot set


def write_store(path, person="7", box=(0, 0, 4, 4), extra_person=None):
    records = [AnnotationRecord(f"r{i}", "w1", f"img{i}", person, box, "eyes",
                                "2026-01-01T00:00:00.000Z") for i in range(3)]
    if extra_person is not None:
        records.append(AnnotationRecord("rx", "w2", "imgx", extra_person,
                                        (8, 8, 12, 12), "nose",
                                        "2026-01-01T00:00:00.000Z"))
    for record in records:
        annotation.append_record(path, record)
    return records


class TestAggregate:
    def test_classifier_mode(self, runner, tmp_path):
        write_maps(tmp_path / "maps")
        out = tmp_path / "agg"
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "classifier", "--maps-dir",
            str(tmp_path / "maps"), "--person", "7", "--out", str(out)])
        assert res.exit_code == 0, res.output
        payload = json.loads((out / "classifier.json").read_text())
        assert payload["maps"] == 3
        assert payload["highlight_pixels"] == math.ceil(0.05 * 256)
        assert (out / "classifier_heatmap.png").exists()
        assert (out / "classifier_highlight.png").exists()

    def test_classifier_mode_filters_person(self, runner, tmp_path):
        write_maps(tmp_path / "maps", class_id=7, count=2)
        write_maps(tmp_path / "maps" / "other", class_id=3, count=1)
        for p in (tmp_path / "maps" / "other").glob("*"):
            p.rename(tmp_path / "maps" / f"other_{p.name}")
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "classifier", "--maps-dir",
            str(tmp_path / "maps"), "--person", "3",
            "--out", str(tmp_path / "agg")])
        assert res.exit_code == 0, res.output
        payload = json.loads((tmp_path / "agg" / "classifier.json").read_text())
        assert payload["maps"] == 1

    def test_human_mode(self, runner, tmp_path):
        store = tmp_path / "store.ndjson"
        write_store(store, extra_person="9")
        out = tmp_path / "agg"
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "human", "--annotations", str(store),
            "--person", "7", "--size", "16x16", "--out", str(out)])
        assert res.exit_code == 0, res.output
        histogram = json.loads((out / "histogram.json").read_text())
        assert histogram == {"eyes": 0.5, "nose": 0.5}
        csv_lines = (out / "histogram.csv").read_text().splitlines()
        assert csv_lines[0] == "label,weight"
        assert len(csv_lines) == 3
        payload = json.loads((out / "human.json").read_text())
        assert payload["records"] == 3
        assert (out / "human_heatmap.png").exists()
        assert (out / "human_highlight.png").exists()

    def test_relative_mode_over_annotations(self, runner, tmp_path):
        store = tmp_path / "store.ndjson"
        write_store(store, extra_person="9")
        out = tmp_path / "agg"
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "relative", "--annotations", str(store),
            "--person", "7", "--size", "16x16", "--out", str(out)])
        assert res.exit_code == 0, res.output
        payload = json.loads((out / "relative.json").read_text())
        assert payload["top_fraction"] == 0.10
        # person 7: three boxes of area 16 (mass 48); person 9: one of 16.
        # diff_sum = 48 - (48 + 16) / 2
        assert payload["diff_sum"] == pytest.approx(48 - 32)

    def test_relative_mode_over_maps(self, runner, tmp_path):
        write_maps(tmp_path / "maps", class_id=1, count=2)
        extra = (100.0 + np.arange(256.0)).reshape(16, 16).astype(np.float32)
        saliency.save_map(saliency.SaliencyMap("z", 2, extra),
                          tmp_path / "maps" / "z.pgm")
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "relative", "--maps-dir",
            str(tmp_path / "maps"), "--person", "1",
            "--out", str(tmp_path / "agg")])
        assert res.exit_code == 0, res.output
        payload = json.loads((tmp_path / "agg" / "relative.json").read_text())
        assert payload["top_fraction"] == 0.05

    def test_relative_mode_requires_one_source(self, runner, tmp_path):
        write_maps(tmp_path / "maps")
        store = tmp_path / "store.ndjson"
        write_store(store)
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "relative", "--maps-dir",
            str(tmp_path / "maps"), "--annotations", str(store),
            "--person", "7", "--size", "16x16",
            "--out", str(tmp_path / "agg")])
        assert res.exit_code == 2

    def test_compare_mode_matches_set_oracle(self, runner, tmp_path):
        hot = write_maps(tmp_path / "maps")
        store = tmp_path / "store.ndjson"
        write_store(store, box=(0, 0, 4, 4))
        out = tmp_path / "agg"
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "compare", "--maps-dir",
            str(tmp_path / "maps"), "--annotations", str(store),
            "--person", "7", "--size", "16x16", "--out", str(out)])
        assert res.exit_code == 0, res.output
        payload = json.loads((out / "overlap.json").read_text())
        human = {(y, x) for y in range(4) for x in range(4)}
        assert payload["human_pixels"] == len(human) == 16
        assert payload["classifier_pixels"] == len(hot) == 13
        assert payload["intersection"] == len(hot & human)
        assert payload["union"] == len(hot | human)
        assert payload["overlap"] == pytest.approx(len(hot & human)
                                                   / len(hot | human))
        assert (out / "classifier_highlight.png").exists()
        assert (out / "human_highlight.png").exists()

    def test_compare_mode_size_mismatch(self, runner, tmp_path):
        write_maps(tmp_path / "maps")
        store = tmp_path / "store.ndjson"
        write_store(store, box=(0, 0, 4, 4))
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "compare", "--maps-dir",
            str(tmp_path / "maps"), "--annotations", str(store),
            "--person", "7", "--size", "8x8", "--out", str(tmp_path / "agg")])
        assert res.exit_code == 1

    def test_bad_size_rejected(self, runner, tmp_path):
        store = tmp_path / "store.ndjson"
        write_store(store)
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "human", "--annotations", str(store),
            "--person", "7", "--size", "16by16", "--out", str(tmp_path / "agg")])
        assert res.exit_code == 2

    def test_missing_person_fails_cleanly(self, runner, tmp_path):
        write_maps(tmp_path / "maps")
        res = runner.invoke(cli.main, [
            "aggregate", "--mode", "classifier", "--maps-dir",
            str(tmp_path / "maps"), "--person", "4",
            "--out", str(tmp_path / "agg")])
        assert res.exit_code == 1
        assert "no saliency maps" in res.output


class TestServeCommand:
    def test_empty_pool_rejected(self, runner, tmp_path):
        (tmp_path / "images").mkdir()
        res = runner.invoke(cli.main, [
            "serve", "--images", str(tmp_path / "images"),
            "--store", str(tmp_path / "store.ndjson")])
        assert res.exit_code == 1
        assert "no PNG images" in res.output

    def test_bad_listen_rejected(self, runner, tmp_path):
        (tmp_path / "images").mkdir()
        res = runner.invoke(cli.main, [
            "serve", "--listen", "8000", "--images", str(tmp_path / "images"),
            "--store", str(tmp_path / "store.ndjson")])
        assert res.exit_code == 2


class TestEntryPoint:
    def test_console_script_help(self):
        import subprocess
        res = subprocess.run(["facesal", "--help"], capture_output=True,
                             text=True, timeout=60)
        assert res.returncode == 0
        for name in ("synth", "train", "saliency", "aggregate", "serve"):
            assert name in res.stdout

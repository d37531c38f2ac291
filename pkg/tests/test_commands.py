import csv
import json
from io import StringIO

import numpy as np
import pytest
import torch
from django.core.management import call_command, get_commands
from django.core.management.base import CommandError

from panorama_iqa.core.imageio import SaliencyMap, save_saliency
from panorama_iqa.core.model import QualityTransformer, load_checkpoint, save_checkpoint
from panorama_iqa.core.synthetic import MANIFEST_NAME
from panorama_iqa.management import main
from panorama_iqa.management.commands.sample import SIDECAR_NAME, read_sidecar

from .conftest import TOY_OVERRIDES, write_image, write_manifest_lines

TOY_ARGS = [
    arg for key, value in TOY_OVERRIDES.items() for arg in ("--set", f"{key}={value}")
]


def run(name, *argv):
    stdout, stderr = StringIO(), StringIO()
    call_command(name, *argv, "--no-progress", stdout=stdout, stderr=stderr)
    return stdout.getvalue(), stderr.getvalue()


@pytest.fixture
def manifest_path(tiny_dataset):
    return str(tiny_dataset.base_dir / MANIFEST_NAME)


@pytest.fixture
def checkpoint(tmp_path, manifest_path):
    path = tmp_path / "model.pt"
    run("train", manifest_path, "--out", str(path), *TOY_ARGS)
    return str(path)


class TestSplit:
    def write_scenes(self, path, n_scenes):
        records = [
            {"image_path": f"s{s}_{i}.ppm", "mos": float(i), "distortion_label": "blur",
             "scene_id": f"s{s}"}
            for s in range(n_scenes)
            for i in range(2)
        ]
        return write_manifest_lines(path, records)

    def test_scene_disjoint_split(self, tmp_path):
        source = self.write_scenes(tmp_path / "all.jsonl", 16)
        out, _ = run("split", str(source))
        summary = json.loads(out)
        assert len(summary["train"]["scenes"]) == 13
        assert len(summary["test"]["scenes"]) == 3
        assert not set(summary["train"]["scenes"]) & set(summary["test"]["scenes"])
        assert summary["train"]["path"] == str(tmp_path / "all.train.jsonl")
        assert summary["train"]["images"] + summary["test"]["images"] == 32

    def test_same_seed_same_files(self, tmp_path):
        source = self.write_scenes(tmp_path / "all.jsonl", 10)
        for name in ("a", "b"):
            run(
                "split",
                str(source),
                "--seed",
                "3",
                "--train-out",
                str(tmp_path / f"{name}.train.jsonl"),
                "--test-out",
                str(tmp_path / f"{name}.test.jsonl"),
            )
        for part in ("train", "test"):
            first = (tmp_path / f"a.{part}.jsonl").read_text()
            assert first == (tmp_path / f"b.{part}.jsonl").read_text()


class TestSample:
    SAMPLER_ARGS = ["--set", "sampler.stride=8", "--set", "sampler.resolution=8"]

    def test_writes_viewports_and_sidecar(self, tmp_path, rng):
        image = write_image(tmp_path / "pano.ppm", rng.random((40, 80, 3)))
        out_dir = tmp_path / "views"
        _, err = run("sample", str(image), "--out", str(out_dir), *self.SAMPLER_ARGS)
        records = read_sidecar(out_dir / SIDECAR_NAME)
        assert len(records) == 4
        assert sorted(p.name for p in out_dir.glob("*.ppm")) == [
            f"viewport_{i:03d}.ppm" for i in range(4)
        ]
        header = (out_dir / SIDECAR_NAME).read_text().splitlines()[:3]
        assert "baseline" in header[1]
        assert "VIEWPORTS SAMPLED" in err

    def test_verbosity_sets_log_level(self, tmp_path, rng):
        image = write_image(tmp_path / "pano.ppm", rng.random((40, 80, 3)))
        _, loud = run("sample", str(image), "--out", str(tmp_path / "a"), "-v", "2",
                      *self.SAMPLER_ARGS)
        _, quiet = run("sample", str(image), "--out", str(tmp_path / "b"), "-v", "0",
                       *self.SAMPLER_ARGS)
        assert "[DEBUG]" in loud
        assert "[DEBUG]" not in quiet
        assert "[INFO]" not in quiet

    def test_rerun_is_identical(self, tmp_path, rng):
        image = write_image(tmp_path / "pano.ppm", rng.random((40, 80, 3)))
        for name in ("a", "b"):
            run("sample", str(image), "--out", str(tmp_path / name), "--seed", "5",
                *self.SAMPLER_ARGS)
        first = (tmp_path / "a" / SIDECAR_NAME).read_text()
        assert first == (tmp_path / "b" / SIDECAR_NAME).read_text()
        for i in range(4):
            name = f"viewport_{i:03d}.ppm"
            first_bytes = (tmp_path / "a" / name).read_bytes()
            assert first_bytes == (tmp_path / "b" / name).read_bytes()

    def test_saliency_file_is_recorded(self, tmp_path, rng):
        image = write_image(tmp_path / "pano.ppm", rng.random((40, 80, 3)))
        saliency = tmp_path / "pano.pgm"
        save_saliency(SaliencyMap(rng.random((40, 80))), saliency)
        out_dir = tmp_path / "views"
        run("sample", str(image), "--saliency", str(saliency), "--out", str(out_dir),
            *self.SAMPLER_ARGS)
        header = (out_dir / SIDECAR_NAME).read_text().splitlines()[1]
        assert str(saliency) in header

    def test_mismatched_saliency_fails(self, tmp_path, rng):
        image = write_image(tmp_path / "pano.ppm", rng.random((40, 80, 3)))
        saliency = tmp_path / "bad.pgm"
        save_saliency(SaliencyMap(rng.random((30, 30))), saliency)
        with pytest.raises(CommandError):
            run("sample", str(image), "--saliency", str(saliency), "--out",
                str(tmp_path / "views"), *self.SAMPLER_ARGS)


class TestTrain:
    def test_writes_checkpoint_and_loss_log(self, tmp_path, manifest_path):
        out_path = tmp_path / "m.pt"
        out, _ = run("train", manifest_path, "--out", str(out_path), *TOY_ARGS)
        summary = json.loads(out)
        assert summary["steps"] == TOY_OVERRIDES["training.steps"]
        assert summary["checkpoint"] == str(tmp_path / "m.pt")
        lines = (tmp_path / "m.pt.loss.jsonl").read_text().splitlines()
        assert len(lines) == TOY_OVERRIDES["training.steps"]
        assert load_checkpoint(tmp_path / "m.pt").config.n_sources == 8

    def test_zero_steps_checkpoint_is_initialization(self, tmp_path, manifest_path):
        path = tmp_path / "m.pt"
        run("train", manifest_path, "--out", str(path), *TOY_ARGS,
            "--set", "training.steps=0", "--seed", "2")
        loaded = load_checkpoint(path).state_dict()
        initial = QualityTransformer(load_checkpoint(path).config, seed=2).state_dict()
        for name, tensor in initial.items():
            if name == "source_table":
                assert torch.equal(loaded[name][:-1], tensor[:-1])
            else:
                assert torch.equal(loaded[name], tensor)
        assert (tmp_path / "m.pt.loss.jsonl").read_text() == ""

    def test_missing_manifest_exits_non_zero(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.jsonl")
        code = main(["train", missing, "--out", str(tmp_path / "m.pt")])
        assert code == 1
        assert "CommandError:" in capsys.readouterr().err


class TestScore:
    def test_scalar_matches_per_viewport_mean(self, checkpoint, tiny_dataset):
        image = str(tiny_dataset.image_file(tiny_dataset.entries[0]))
        scalar, _ = run("score", checkpoint, image, *TOY_ARGS)
        detailed, _ = run("score", checkpoint, image, "--per-viewport", *TOY_ARGS)
        document = json.loads(detailed)
        assert float(scalar) == document["score"]
        scores = [v["score"] for v in document["viewports"]]
        assert document["score"] == pytest.approx(np.mean(scores), abs=1e-12)

    def test_deterministic(self, checkpoint, tiny_dataset):
        image = str(tiny_dataset.image_file(tiny_dataset.entries[3]))
        assert run("score", checkpoint, image, *TOY_ARGS)[0] == run(
            "score", checkpoint, image, *TOY_ARGS
        )[0]

    def test_matches_eval_prediction(self, checkpoint, tiny_dataset, manifest_path):
        entry = tiny_dataset.entries[2]
        image = str(tiny_dataset.image_file(entry))
        scalar, _ = run("score", checkpoint, image, *TOY_ARGS)
        out, _ = run("eval", checkpoint, manifest_path, *TOY_ARGS)
        predictions = {
            p["image_path"]: p["prediction"] for p in json.loads(out)["predictions"]
        }
        assert float(scalar) == pytest.approx(predictions[entry.image_path], abs=1e-9)

    def test_architecture_mismatch(self, checkpoint, tiny_dataset):
        image = str(tiny_dataset.image_file(tiny_dataset.entries[0]))
        with pytest.raises(CommandError, match="token_dim"):
            run("score", checkpoint, image, *TOY_ARGS, "--set", "model.token_dim=32",
                "--set", "model.mlp_dim=64")


class TestEval:
    def test_report_and_predictions(self, tmp_path, checkpoint, manifest_path):
        csv_path = tmp_path / "predictions.csv"
        out, err = run(
            "eval", checkpoint, manifest_path, "--predictions", str(csv_path), *TOY_ARGS
        )
        report = json.loads(out)
        assert set(report["groups"]) == {"blur"}
        assert report["n_images"] == 8
        assert len(report["predictions"]) == 8
        with open(csv_path, newline="") as handle:
            assert len(list(csv.DictReader(handle))) == 8
        assert "EVALUATION COMPLETED" in err

    def test_constant_model_on_one_image(self, tmp_path, toy_config, tiny_dataset):
        model = QualityTransformer(toy_config.model)
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.fill_(2.5)
        save_checkpoint(model, tmp_path / "constant.pt")
        entry = tiny_dataset.entries[0]
        manifest = write_manifest_lines(
            tmp_path / "one.jsonl",
            [{"image_path": str(tiny_dataset.image_file(entry)), "mos": 4.0,
              "distortion_label": "blur", "scene_id": "s0"}],
        )
        out, _ = run("eval", str(tmp_path / "constant.pt"), str(manifest), *TOY_ARGS)
        report = json.loads(out)
        assert report["rmse"] == pytest.approx(1.5)
        assert report["raw_rmse"] == pytest.approx(1.5)
        assert report["srcc"] is None

    def test_malformed_manifest_names_the_line(self, tmp_path, checkpoint):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"image_path": "a.ppm", "mos": 1, "distortion_label": "b", '
                       '"scene_id": "s"}\n{broken\n')
        with pytest.raises(CommandError, match="line 2"):
            run("eval", checkpoint, str(bad), *TOY_ARGS)


class TestOtherCommands:
    def test_synth(self, tmp_path):
        out, _ = run("synth", str(tmp_path / "data"), "--scenes", "2", "--levels", "2",
                     "--height", "16", "--width", "32")
        manifest = out.strip()
        assert manifest == str(tmp_path / "data" / MANIFEST_NAME)
        assert len((tmp_path / "data" / MANIFEST_NAME).read_text().splitlines()) == 4

    def test_gradcheck(self):
        out, _ = run("gradcheck", "--activation", "gelu", "--coords", "4")
        report = json.loads(out)
        assert list(report) == ["gelu"]
        assert all(entry["max_error"] < 1e-3 for entry in report["gelu"])

    def test_ablate(self, manifest_path):
        out, _ = run("ablate", manifest_path, manifest_path, "--seeds", "0",
                     "--variants", "uniform-random", *TOY_ARGS)
        table = json.loads(out)
        assert set(table["variants"]) == {"full", "uniform-random"}
        assert table["full_at_least_as_good"]["uniform-random"] in (0, 1)


class TestEntryPoint:
    def test_commands_belong_to_the_app(self):
        commands = get_commands()
        for name in ("sample", "train", "score", "eval", "split", "synth", "ablate",
                     "gradcheck"):
            assert commands[name] == "panorama_iqa"

    def test_no_arguments_lists_commands(self, capsys):
        assert main([]) == 0
        out = capsys.readouterr().out
        assert "[panorama_iqa]" in out
        assert "eval" in out

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "gradcheck" in capsys.readouterr().out

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "Unknown command" in capsys.readouterr().err

    def test_bad_override(self, tmp_path, capsys):
        manifest = str(tmp_path / "m.jsonl")
        code = main(["split", manifest, "--set", "sampler.fraction=2"])
        assert code == 1
        err = capsys.readouterr().err
        assert "CommandError:" in err
        assert "sampler.fraction" in err

    def test_usage_error(self):
        assert main(["train"]) == 2

"""Command-line interface: end-to-end subcommand flows on a miniature run."""

import json

import pytest

from ovdet.cli import main

# Shrink every stage so the full gen -> pretrain -> train -> detect -> eval
# chain stays fast; the goal here is plumbing, not model quality.
SMALL = [
    "--set", "data.num_train=6",
    "--set", "data.num_val=3",
    "--set", "data.canvas=32",
    "--set", "clip.num_layers=1",
    "--set", "encoder.num_layers=1",
    "--set", "decoder.num_layers=1",
    "--set", "decoder.m=8",
    "--set", "pretrain.steps=12",
    "--set", "pretrain.crops_per_class=2",
    "--set", "pretrain.holdout_per_class=1",
    "--set", "pretrain.region_scenes=2",
    "--set", "pretrain.region_canvas=32",
    "--set", "train.steps=4",
    "--set", "train.batch_size=2",
    "--set", "train.checkpoint_every=0",
    "--set", "ensemble.epsilon=0.0",
]


def paths_for(tmp_path):
    run = tmp_path / "run"
    return [
        "--set", f"paths.out_dir={run}",
        "--set", f"paths.data_dir={run}/data",
        "--set", f"paths.clip_checkpoint={run}/clip.pt",
        "--set", f"paths.detector_dir={run}/det",
        "--set", f"paths.detector_checkpoint={run}/det/detector_final.pt",
    ]


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory, capfd_disabled=None):
    """Run gen + pretrain + train once; later tests reuse the artifacts."""
    tmp_path = tmp_path_factory.mktemp("cli")
    args = SMALL + paths_for(tmp_path)
    assert main(args + ["gen"]) == 0
    assert main(args + ["pretrain"]) == 0
    assert main(args + ["train"]) == 0
    return tmp_path, args


class TestPipelineCommands:
    def test_gen_outputs(self, pipeline_run):
        tmp_path, _ = pipeline_run
        data = tmp_path / "run" / "data"
        assert (data / "train.json").exists()
        assert (data / "val.json").exists()
        assert (data / "vocab.txt").exists()
        doc = json.loads((data / "train.json").read_text())
        assert len(doc["images"]) == 6

    def test_pretrain_checkpoint(self, pipeline_run):
        tmp_path, _ = pipeline_run
        assert (tmp_path / "run" / "clip.pt").exists()

    def test_train_outputs(self, pipeline_run):
        tmp_path, _ = pipeline_run
        det = tmp_path / "run" / "det"
        assert (det / "detector_final.pt").exists()
        assert (det / "loss_log.csv").exists()

    def test_detect_then_eval(self, pipeline_run):
        tmp_path, args = pipeline_run
        results = tmp_path / "run" / "results.json"
        code = main(args + ["--out", str(results), "detect", str(tmp_path / "run/data/val.json")])
        assert code == 0
        records = json.loads(results.read_text())
        assert isinstance(records, list)
        for rec in records[:5]:
            assert set(rec) == {"image_id", "category_id", "bbox", "score"}

        report_path = tmp_path / "run" / "eval_report.json"
        code = main(
            args
            + ["--out", str(report_path), "eval", str(results), str(tmp_path / "run/data/val.json")]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert set(report) >= {"map50_all", "map50_base", "map50_novel"}

    def test_detect_on_image_directory(self, pipeline_run):
        tmp_path, args = pipeline_run
        images_dir = tmp_path / "run" / "data" / "images"
        out = tmp_path / "run" / "dir_results.json"
        code = main(args + ["--out", str(out), "detect", str(images_dir)])
        assert code == 0
        assert out.exists()


class TestErrorHandling:
    def test_train_without_dataset_exits_2(self, tmp_path):
        args = SMALL + paths_for(tmp_path)
        assert main(args + ["train"]) == 2

    def test_missing_checkpoint_exits_2(self, pipeline_run, tmp_path):
        run_tmp, args = pipeline_run
        broken = [
            a if "clip.pt" not in a else f"paths.clip_checkpoint={tmp_path}/absent.pt" for a in args
        ]
        code = main(broken + ["detect", str(run_tmp / "run/data/val.json")])
        assert code == 2

    def test_bad_override_exits_3(self, tmp_path):
        assert main(["--set", "decoder.bananas=1"] + paths_for(tmp_path) + ["gen"]) == 3

    def test_bad_config_value_exits_3(self, tmp_path):
        assert main(["--set", "decoder.m=0"] + paths_for(tmp_path) + ["gen"]) == 3

    def test_missing_subcommand_exits_nonzero(self):
        with pytest.raises(SystemExit):
            main([])


class TestSeedFlag:
    def test_gen_seed_changes_data(self, tmp_path):
        base = SMALL + ["--set", "data.num_train=2", "--set", "data.num_val=1"]
        for seed, name in ((1, "a"), (2, "b"), (1, "c")):
            args = base + [
                "--set", f"paths.data_dir={tmp_path}/{name}",
                "--seed", str(seed),
            ]
            assert main(args + ["gen"]) == 0
        a = (tmp_path / "a" / "train.json").read_bytes()
        b = (tmp_path / "b" / "train.json").read_bytes()
        c = (tmp_path / "c" / "train.json").read_bytes()
        assert a != b
        assert a == c

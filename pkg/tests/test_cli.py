import csv

import numpy as np
import pytest

from efrlfn.cli import main, run
from efrlfn.curation import procedural_images
from efrlfn.io import read_image, write_image


def write_ppm_dir(directory, images, names=None):
    directory.mkdir(parents=True, exist_ok=True)
    names = names or [f"img{i}" for i in range(len(images))]
    for name, img in zip(names, images):
        write_image(img, directory / f"{name}.ppm")
    return names


def train_tiny(tmp_path, extra=()):
    tmp_path.mkdir(parents=True, exist_ok=True)
    weights = tmp_path / "tiny.efrw"
    code = main(
        [
            "train",
            "--synthetic", "2",
            "--size", "16",
            "--steps", "2",
            "--channels", "8",
            "--blocks", "1",
            "--scale", "2",
            "--batch", "2",
            "--seed", "0",
            "--out", str(weights),
            *extra,
        ]
    )
    assert code == 0
    return weights


class TestTrainInfer:
    def test_train_writes_weights_and_log(self, tmp_path):
        log = tmp_path / "train.jsonl"
        weights = train_tiny(tmp_path, extra=["--log", str(log)])
        assert weights.exists()
        assert len(log.read_text().splitlines()) == 2

    def test_train_deterministic_outputs(self, tmp_path):
        w1 = train_tiny(tmp_path / "a")
        w2 = train_tiny(tmp_path / "b")
        assert w1.read_bytes() == w2.read_bytes()

    def test_infer_doubles_dimensions(self, tmp_path):
        weights = train_tiny(tmp_path)
        src = tmp_path / "in.ppm"
        write_image(procedural_images(1, size=12, seed=3)[0], src)
        out = tmp_path / "out.ppm"
        assert main(["infer", "--weights", str(weights), "--out", str(out), str(src)]) == 0
        assert read_image(out).shape == (1, 3, 24, 24)

    def test_train_from_hr_dir(self, tmp_path):
        hr_dir = tmp_path / "hr"
        write_ppm_dir(hr_dir, procedural_images(2, size=16, seed=4))
        weights = tmp_path / "w.efrw"
        code = main(
            [
                "train", "--hr-dir", str(hr_dir), "--steps", "1", "--channels", "8",
                "--blocks", "1", "--scale", "2", "--batch", "2", "--out", str(weights),
            ]
        )
        assert code == 0 and weights.exists()

    def test_resume_from_checkpoint(self, tmp_path):
        weights = train_tiny(tmp_path, extra=["--checkpoint-every", "1"])
        out2 = tmp_path / "resumed.efrw"
        code = main(
            [
                "train", "--synthetic", "2", "--size", "16", "--steps", "4",
                "--channels", "8", "--blocks", "1", "--scale", "2", "--batch", "2",
                "--seed", "0", "--resume", str(weights), "--out", str(out2),
            ]
        )
        assert code == 0 and out2.exists()

    def test_missing_input_nonzero_exit(self, tmp_path, capsys):
        code = main(["train", "--steps", "1", "--out", str(tmp_path / "w.efrw")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("steps=3\nchannels=8\nblocks=1\nsynthetic=2\nsize=16\nscale=2\nbatch=2\n")
        log = tmp_path / "t.jsonl"
        weights = tmp_path / "w.efrw"
        code = main(
            ["train", "--config", str(cfg), "--steps", "1", "--out", str(weights), "--log", str(log)]
        )
        assert code == 0
        assert len(log.read_text().splitlines()) == 1  # explicit --steps wins

    def test_config_used_when_flag_absent(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("steps=2\nchannels=8\nblocks=1\nsynthetic=2\nsize=16\nscale=2\nbatch=2\n")
        log = tmp_path / "t.jsonl"
        code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "w.efrw"), "--log", str(log)])
        assert code == 0
        assert len(log.read_text().splitlines()) == 2

    def test_malformed_config_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("steps 3\n")
        code = main(["train", "--config", str(cfg), "--synthetic", "2", "--out", str(tmp_path / "w")])
        assert code == 1


class TestRank:
    def test_two_item_fixture_odds(self, tmp_path, capsys):
        responses = tmp_path / "responses.csv"
        rows = ["worker,pair_left,pair_right,choice,verified"]
        rows += ["w%d,A,B,left,1" % i for i in range(3)]
        rows += ["w9,A,B,right,1"]
        responses.write_text("\n".join(rows) + "\n")
        out = tmp_path / "scores.csv"
        assert main(["rank", "--responses", str(responses), "--out", str(out)]) == 0
        with open(out) as fh:
            table = {r["item"]: float(r["score"]) for r in csv.DictReader(fh)}
        assert table["A"] / table["B"] == pytest.approx(3.0, abs=1e-6)


class TestBench:
    def test_stub_bench_writes_reports(self, tmp_path):
        out_csv = tmp_path / "bench.csv"
        out_json = tmp_path / "bench.json"
        code = main(
            [
                "bench", "--stub-ms", "1", "--frames", "10", "--runs", "2", "--warmup", "1",
                "--height", "8", "--width", "8",
                "--out-csv", str(out_csv), "--out-json", str(out_json),
            ]
        )
        assert code == 0 and out_csv.exists() and out_json.exists()

    def test_model_bench(self, tmp_path):
        weights = train_tiny(tmp_path)
        out_csv = tmp_path / "bench.csv"
        code = main(
            [
                "bench", "--weights", str(weights), "--frames", "2", "--runs", "1",
                "--warmup", "0", "--height", "8", "--width", "8", "--out-csv", str(out_csv),
            ]
        )
        assert code == 0
        assert "tiny" in out_csv.read_text()


class TestMetricsCommand:
    def test_table_with_mean_row(self, tmp_path, capsys):
        imgs = procedural_images(2, size=16, seed=5)
        write_ppm_dir(tmp_path / "hr", imgs, names=["a", "b"])
        write_ppm_dir(tmp_path / "sr", imgs, names=["a", "b"])
        out = tmp_path / "metrics.csv"
        code = main(["metrics", "--sr-dir", str(tmp_path / "sr"), "--hr-dir", str(tmp_path / "hr"), "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "image,psnr_db,ssim"
        assert lines[-1].startswith("mean,")

    def test_mismatched_names_fail(self, tmp_path):
        imgs = procedural_images(1, size=16, seed=6)
        write_ppm_dir(tmp_path / "hr", imgs, names=["a"])
        write_ppm_dir(tmp_path / "sr", imgs, names=["z"])
        code = main(["metrics", "--sr-dir", str(tmp_path / "sr"), "--hr-dir", str(tmp_path / "hr")])
        assert code == 1


class TestDataset:
    def test_filter_identical_triple(self, tmp_path, capsys):
        img = procedural_images(1, size=16, seed=7)[0]
        p = tmp_path / "f.ppm"
        write_image(img, p)
        code = main(["dataset", "filter", "--frames", str(p), str(p), str(p)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "discard"

    def test_categorize_writes_split(self, tmp_path):
        records = tmp_path / "records.csv"
        rng = np.random.default_rng(8)
        dim = 5
        lines = ["id,si,ti,bitrate,quality," + ",".join(f"e{i}" for i in range(dim))]
        for i in range(30):
            vals = rng.uniform(0, 1, size=4 + dim)
            lines.append(f"v{i:03d}," + ",".join(repr(float(v)) for v in vals))
        records.write_text("\n".join(lines) + "\n")
        out = tmp_path / "split.csv"
        code = main(["dataset", "categorize", "--records", str(records), "--clusters", "5", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 30
        assert sum(1 for r in rows if r["split"] == "test") == 5

    def test_degrade_halves_dims(self, tmp_path):
        write_ppm_dir(tmp_path / "hr", procedural_images(1, size=16, seed=9))
        code = main(
            ["dataset", "degrade", "--hr-dir", str(tmp_path / "hr"), "--out-dir", str(tmp_path / "lr"), "--scale", "2"]
        )
        assert code == 0
        assert read_image(tmp_path / "lr" / "img0.ppm").shape == (1, 3, 8, 8)


class TestDumpFeatures:
    def test_writes_block_maps(self, tmp_path):
        weights = train_tiny(tmp_path)
        src = tmp_path / "in.ppm"
        write_image(procedural_images(1, size=12, seed=10)[0], src)
        out_dir = tmp_path / "features"
        code = main(
            ["dump-features", "--weights", str(weights), "--input", str(src), "--blocks", "1", "--out-dir", str(out_dir)]
        )
        assert code == 0
        assert (out_dir / "block1.ppm").exists()
        assert read_image(out_dir / "block1.ppm").shape == (1, 3, 12, 12)

    def test_out_of_range_block_fails(self, tmp_path):
        weights = train_tiny(tmp_path)
        src = tmp_path / "in.ppm"
        write_image(procedural_images(1, size=12, seed=11)[0], src)
        code = main(
            ["dump-features", "--weights", str(weights), "--input", str(src), "--blocks", "9", "--out-dir", str(tmp_path / "f")]
        )
        assert code == 1


class TestAblate:
    def test_attention_activation_grid_six_rows(self, tmp_path):
        out = tmp_path / "grid.csv"
        code = main(
            [
                "ablate", "--grid", "attention-activation", "--steps", "1",
                "--channels", "8", "--blocks", "1", "--synthetic", "2", "--size", "16",
                "--batch", "2", "--out", str(out),
            ]
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        combos = {(r["activation"], r["attention"]) for r in rows}
        assert combos == {
            (a, t) for a in ("tanh", "shifted_sigmoid", "relu") for t in ("eca", "esa")
        }

    def test_loss_grid_rows(self, tmp_path):
        out = tmp_path / "loss.csv"
        code = main(
            [
                "ablate", "--grid", "loss", "--steps", "1", "--channels", "8",
                "--blocks", "1", "--synthetic", "2", "--size", "16", "--batch", "2",
                "--out", str(out),
            ]
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["loss"] for r in rows] == ["full", "no_charb", "no_vgg", "no_sobel", "l1", "l2"]


class TestUsage:
    def test_unknown_flag_exits_nonzero_with_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--nonsense"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code == 2

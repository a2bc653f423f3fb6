import csv
import json

import numpy as np
import pytest

from cmrestore import cli
from cmrestore import image as img
from cmrestore.operators import SRBicubic


@pytest.fixture
def gt_image(tmp_path, textured_mean):
    path = tmp_path / "gt.cmt"
    img.save_tensor(path, np.clip(textured_mean, 0, 1))
    return path


def run(argv):
    return cli.main([str(a) for a in argv])


def test_degrade_sr_shapes(tmp_path, gt_image):
    out = tmp_path / "deg"
    assert run(["degrade", "--input", gt_image, "--task", "sr4",
                "--output-dir", out]) == 0
    y = img.load_tensor(out / "y.cmt")
    assert y.shape == (8, 8, 3)  # 32/4
    assert (out / "y_preview.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["shape"] == [32, 32, 3]


def test_degrade_inpaint_mask_deterministic(tmp_path, gt_image):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["degrade", "--input", gt_image, "--task", "inpaint-random",
                    "--fraction", 0.8, "--seed", 3, "--output-dir", out]) == 0
    assert (a / "mask.png").read_bytes() == (b / "mask.png").read_bytes()
    mask = img.load_png(a / "mask.png")[:, :, 0] > 0
    assert mask.sum() == round(0.2 * 32 * 32)


def test_degrade_rerun_reproduces_measurement(tmp_path, gt_image):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["degrade", "--input", gt_image, "--task", "gblur",
                    "--sigma-y", 0.05, "--seed", 11, "--output-dir", out]) == 0
    assert (a / "y.cmt").read_bytes() == (b / "y.cmt").read_bytes()
    assert (a / "kernel.cmt").exists()


def test_restore_without_reference_reports_residual_only(tmp_path, gt_image):
    deg = tmp_path / "deg"
    run(["degrade", "--input", gt_image, "--task", "sr2", "--sigma-y", 0.025,
         "--output-dir", deg])
    res = tmp_path / "res"
    assert run(["restore", deg / "manifest.json", "--output-dir", res,
                "--prior-std", 0.2]) == 0
    report = json.loads((res / "report.json").read_text())
    assert report["psnr_db"] is None
    assert report["residual_norm"] >= 0
    assert (res / "restored.png").exists()
    assert (res / "restored.cmt").exists()


def test_restore_identity_operator_hits_cap(tmp_path, gt_image):
    # delta-kernel blur makes A the identity; mu=1 BP forces x_hat = y
    kernel = tmp_path / "delta.cmt"
    img.save_tensor(kernel, np.array([[[1.0]]]))
    deg = tmp_path / "deg"
    run(["degrade", "--input", gt_image, "--task", "gblur",
         "--kernel-file", kernel, "--sigma-y", 0, "--output-dir", deg])
    res = tmp_path / "res"
    assert run(["restore", deg / "manifest.json", "--reference", gt_image,
                "--output-dir", res]) == 0
    report = json.loads((res / "report.json").read_text())
    assert report["psnr_db"] == 100.0


def test_restore_beats_pinv_baseline(tmp_path, textured_mean):
    gt = tmp_path / "gt.cmt"
    mean_file = tmp_path / "mean.cmt"
    g = np.random.default_rng(0)
    truth = np.clip(textured_mean + 0.1 * g.standard_normal((32, 32, 3)), 0, 1)
    img.save_tensor(gt, truth)
    img.save_tensor(mean_file, textured_mean)
    truth = img.load_tensor(gt)  # compare against the stored f32 truth

    deg = tmp_path / "deg"
    run(["degrade", "--input", gt, "--task", "sr2", "--sigma-y", 0.025,
         "--output-dir", deg])
    res = tmp_path / "res"
    assert run(["restore", deg / "manifest.json", "--reference", gt,
                "--output-dir", res, "--prior-mean", mean_file,
                "--prior-std", 0.12]) == 0
    report = json.loads((res / "report.json").read_text())

    op = SRBicubic((32, 32, 3), 2)
    y = img.load_tensor(deg / "y.cmt")
    baseline = img.psnr(np.clip(truth, 0, 1), np.clip(op.apply_pinv(y), 0, 1))
    assert report["psnr_db"] > baseline


def test_ablate_single_row(tmp_path, gt_image, capsys):
    indir = tmp_path / "imgs"
    indir.mkdir()
    img.save_png(indir / "one.png", img.load_tensor(gt_image))
    assert run(["ablate", indir, "--task", "sr2", "--sigma-y", 0.025,
                "--rows", "split", "--prior-std", 0.2]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("variant")
    assert len(lines) == 2
    assert lines[1].startswith("split")


def test_ablate_csv_and_equality_rows(tmp_path, gt_image):
    indir = tmp_path / "imgs"
    indir.mkdir()
    x = img.load_tensor(gt_image)
    img.save_png(indir / "one.png", x)
    img.save_png(indir / "two.png", np.clip(x[::-1], 0, 1))
    out_csv = tmp_path / "table.csv"
    assert run(["ablate", indir, "--task", "sr2", "--sigma-y", 0.025,
                "--seed", 5, "--prior-std", 0.2, "--csv", out_csv]) == 0
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["variant", "psnr_mean", "residual_mean", "nfe_count"]
    table = {r[0]: r[1:] for r in rows[1:]}
    assert set(table) == set(cli.ABLATION_ROWS)
    # shared seeds: the guided baseline equals the eta=1, delta=0 reduction
    assert table["baseline"] == table["split-eta1-delta0"]
    assert all(r[3] == "4" for r in rows[1:])


def test_ablate_workers_deterministic(tmp_path, gt_image):
    indir = tmp_path / "imgs"
    indir.mkdir()
    x = img.load_tensor(gt_image)
    img.save_png(indir / "one.png", x)
    img.save_png(indir / "two.png", np.clip(1 - x, 0, 1))
    csvs = []
    for workers, name in ((1, "w1.csv"), (3, "w3.csv")):
        out_csv = tmp_path / name
        assert run(["ablate", indir, "--task", "sr2", "--sigma-y", 0.025,
                    "--workers", workers, "--prior-std", 0.2,
                    "--rows", "split,baseline", "--csv", out_csv]) == 0
        csvs.append(out_csv.read_bytes())
    assert csvs[0] == csvs[1]


def test_ablate_empty_dir_is_usage_error(tmp_path):
    indir = tmp_path / "empty"
    indir.mkdir()
    assert run(["ablate", indir]) == 1


def test_verify_passes_and_fault_fails(capsys):
    assert run(["verify", "--size", "16", "--instances", "3",
                "--samples", 20000]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert run(["verify", "--size", "16", "--instances", "1",
                "--samples", 20000, "--inject-fault"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_schedule_dump(tmp_path, capsys):
    from cmrestore.schedule import build_schedule

    out_csv = tmp_path / "sched.csv"
    assert run(["schedule-dump", "--i-n", 150, "--gamma", 0.2, "--n", 4,
                "--csv", out_csv]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6  # header + 4 rows + csv note
    sched = build_schedule(150, 0.2, 4)
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    for k, row in enumerate(rows):
        assert float(row[1]) == sched.alpha_bar[k]
        assert float(row[2]) == sched.tau[k]


def test_config_round_trip(tmp_path):
    cfg = cli.RunConfig(task="gblur", sigma_y=0.05, seed=9, delta="0.1,0.2,0.3,0.4")
    text = cfg.to_text()
    back = cli.RunConfig.from_text(text)
    assert back == cfg
    assert cli.RunConfig.from_text(back.to_text()) == back


def test_config_unknown_key_rejected():
    with pytest.raises(cli.UsageError):
        cli.RunConfig.from_text("task=sr4\nbogus=1\n")
    with pytest.raises(cli.UsageError):
        cli.RunConfig.from_text("task sr4\n")


def test_config_file_with_flag_override(tmp_path, gt_image):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(f"task=sr2\nsigma_y=0.05\ninput={gt_image}\n"
                        f"output_dir={tmp_path / 'o1'}\n")
    assert run(["degrade", "--config", cfg_file]) == 0
    manifest = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert manifest["config"]["sigma_y"] == 0.05
    # flags win over the file
    assert run(["degrade", "--config", cfg_file, "--sigma-y", 0.01,
                "--output-dir", tmp_path / "o2"]) == 0
    manifest = json.loads((tmp_path / "o2" / "manifest.json").read_text())
    assert manifest["config"]["sigma_y"] == 0.01


def test_usage_errors_exit_one(tmp_path, gt_image):
    assert run(["degrade", "--input", gt_image, "--task", "nope"]) == 1
    assert run(["degrade"]) == 1  # no input
    assert run(["restore", tmp_path / "missing.json"]) == 1
    assert run(["bogus-command"]) == 1

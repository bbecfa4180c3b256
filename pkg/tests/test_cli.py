import subprocess
import sys

import pytest

from svtr2.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--profile", "regular", "--n", "24", "--seed", "3", "--out", str(root / "data"),
                 "--lengths", "1-3"]) == 0
    (root / "train.cfg").write_text("# tiny smoke run\ntotal_epochs = 1\nwarmup_epochs = 0.5\nbatch_size = 8\n"
                                    "lr = 1e-3\nlr_ref_batch = 8\nval_fraction = 0.2\n")
    assert main(["train", "--config", str(root / "train.cfg"), "--data", str(root / "data" / "manifest.tsv"),
                 "--out", str(root / "run"), "--log-every", "1"]) == 0
    return root


class TestPipeline:
    def test_synth_outputs(self, workspace):
        data = workspace / "data"
        assert (data / "charset.txt").is_file()
        assert len((data / "manifest.tsv").read_text().splitlines()) == 24
        assert len(list((data / "images").glob("*.pgm"))) == 24

    def test_train_writes_checkpoints(self, workspace):
        for name in ("phase_A.ckpt", "phase_B.ckpt", "inference.ckpt"):
            assert (workspace / "run" / name).is_file()

    def test_eval_report_and_dumps(self, workspace, capsys):
        rc = main(["eval", "--ckpt", str(workspace / "run" / "phase_B.ckpt"),
                   "--data", str(workspace / "data" / "manifest.tsv"), "--report", str(workspace / "r.csv"),
                   "--dump-rearrangement", str(workspace / "frm"), "--dump-sgm-attn", str(workspace / "sgm")])
        assert rc == 0
        assert "word accuracy" in capsys.readouterr().out
        assert len((workspace / "r.csv").read_text().splitlines()) == 25
        assert {p.suffixes[-2] for p in (workspace / "frm").glob("*.csv")} == {".mh", ".mv", ".m"}
        assert {p.suffixes[-2] for p in (workspace / "sgm").glob("*.csv")} == {".left", ".right"}

    def test_sgm_dump_needs_phase_b(self, workspace, capsys):
        rc = main(["eval", "--ckpt", str(workspace / "run" / "inference.ckpt"),
                   "--data", str(workspace / "data" / "manifest.tsv"), "--dump-sgm-attn", str(workspace / "x")])
        assert rc == 2 and "phase B" in capsys.readouterr().err

    def test_bench(self, workspace, capsys):
        assert main(["bench", "--ckpt", str(workspace / "run" / "inference.ckpt"),
                     "--data", str(workspace / "data" / "manifest.tsv")]) == 0
        assert "FPS" in capsys.readouterr().out

    def test_decode(self, workspace, capsys):
        image = sorted((workspace / "data" / "images").glob("*.pgm"))[0]
        assert main(["decode", "--ckpt", str(workspace / "run" / "inference.ckpt"), "--image", str(image)]) == 0
        text, confidence = capsys.readouterr().out.rstrip("\n").split("\t")
        assert set(text) <= set("acdehilnorst") and 0.0 <= float(confidence) <= 1.0

    def test_charset_mismatch_is_reported(self, workspace, tmp_path, capsys):
        assert main(["synth", "--profile", "regular", "--n", "2", "--out", str(tmp_path),
                     "--alphabet", "abcdefghijklmnopqrstuvwxyz"]) == 0
        rc = main(["eval", "--ckpt", str(workspace / "run" / "inference.ckpt"),
                   "--data", str(tmp_path / "manifest.tsv")])
        assert rc == 2 and "charset" in capsys.readouterr().err


class TestErrors:
    def test_missing_manifest(self, tmp_path, capsys):
        assert main(["eval", "--ckpt", str(tmp_path / "x.ckpt"), "--data", str(tmp_path / "m.tsv")]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_config(self, workspace, tmp_path, capsys):
        (tmp_path / "bad.cfg").write_text("lr = fast\n")
        rc = main(["train", "--config", str(tmp_path / "bad.cfg"),
                   "--data", str(workspace / "data" / "manifest.tsv"), "--out", str(tmp_path)])
        assert rc == 2 and "line 1" in capsys.readouterr().err


def test_gradcheck_subcommand_parses():
    from svtr2.cli import build_parser

    args = build_parser().parse_args(["gradcheck", "--seed", "1"])
    assert args.seed == 1 and args.func.__name__ == "cmd_gradcheck"


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "svtr2.cli", "--help"], capture_output=True, text=True, check=True)
    for command in ("train", "eval", "bench", "synth", "gradcheck", "decode"):
        assert command in out.stdout

import csv
import xml.etree.ElementTree as ET

import pytest

from fmgan.cli import main, parse_config
from fmgan.errors import ConfigError, InputError

TINY_TRAIN = ["--batch_size", "4", "--seq_len", "5", "--emb_dim", "6", "--hidden", "5",
              "--noise_dim", "3", "--windows", "2,3", "--filters", "4", "--heldout_size", "8",
              "--heldout_every", "2", "--eval_samples", "10", "--eval_every", "2",
              "--ipot_iters", "30", "--iterations", "3", "--toy_states", "6",
              "--toy_branching", "2", "--toy_train_size", "40", "--toy_test_size", "20"]

TINY_COND = ["--batch_size", "4", "--seq_len", "5", "--emb_dim", "6", "--hidden", "5",
             "--windows", "2,3", "--filters", "4", "--ipot_iters", "30", "--iterations", "2",
             "--eval_every", "2", "--eval_size", "8", "--toy_states", "6", "--toy_branching", "2",
             "--toy_train_size", "40", "--toy_test_size", "20"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def without_wall(rows):
    col = rows[0].index("wall_ms")
    return [r[:col] + r[col + 1:] for r in rows]


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = tmp_path / "empty.cfg"
        cfg.write_text("")
        rc = parse_config("train", cfg, environ={})
        assert rc.values["lr"] == 1e-4 and rc.values["critic_steps"] == 5
        assert rc.values["beta"] == 0.5 and rc.values["windows"] == (3, 4, 5)

    def test_flag_beats_file(self, tmp_path):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("beta = 0.5\n")
        rc = parse_config("ot-bench", cfg, [("beta", "0.7")], environ={})
        assert rc.values["beta"] == 0.7

    def test_section_prefixes(self, tmp_path):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("train.lr = 0.01\nsolver.beta = 0.3\nstyle.lam = 2.0  # ignored by train\n")
        rc = parse_config("train", cfg, environ={})
        assert rc.values["lr"] == 0.01 and rc.values["beta"] == 0.3
        assert "lam" not in rc.values

    def test_misspelled_key_named(self, tmp_path):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("bata = 0.5\n")
        with pytest.raises(ConfigError, match="bata"):
            parse_config("ot-bench", cfg, environ={})

    def test_type_mismatch_named(self):
        with pytest.raises(ConfigError, match="batch_size"):
            parse_config("train", flags=[("batch_size", "many")], environ={})

    def test_seed_environment(self):
        rc = parse_config("train", environ={"FMD_SEED": "17"})
        assert rc.values["seed"] == 17
        rc = parse_config("train", flags=[("seed", "3")], environ={"FMD_SEED": "17"})
        assert rc.values["seed"] == 3

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(InputError):
            parse_config("train", tmp_path / "nope.cfg", environ={})

    def test_resolved_text_round_trips(self, tmp_path):
        rc = parse_config("train", flags=[("lr", "0.002"), ("windows", "2,4")], environ={})
        cfg = tmp_path / "r.cfg"
        cfg.write_text(rc.text())
        again = parse_config("train", cfg, environ={})
        assert again.values == rc.values and again.hash() == rc.hash()


class TestExitCodes:
    def test_config_error(self, tmp_path):
        assert main(["train", "--outdir", str(tmp_path), "--bata", "1"]) == 2

    def test_bad_command(self, tmp_path):
        assert main(["fly", "--outdir", str(tmp_path)]) == 2

    def test_missing_dataset_path(self, tmp_path):
        code = main(["train", "--outdir", str(tmp_path), "--train_file", str(tmp_path / "none.txt")])
        assert code == 2

    def test_input_error(self, tmp_path):
        assert main(["eval", "--outdir", str(tmp_path), "--candidates", str(tmp_path / "x"),
                     "--references", str(tmp_path / "y")]) == 3

    def test_bad_cost_file(self, tmp_path):
        (tmp_path / "c.txt").write_text("0.1 oops\n")
        assert main(["ot-bench", "--outdir", str(tmp_path), "--cost_file", str(tmp_path / "c.txt")]) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_error(self, tmp_path):
        code = main(["train", "--outdir", str(tmp_path), *TINY_TRAIN, "--lr", "1e308",
                     "--iterations", "5"])
        assert code == 4


class TestCommands:
    def test_train_generate_eval(self, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--outdir", str(run), *TINY_TRAIN]) == 0
        for name in ("resolved.cfg", "metrics.csv", "final.bin", "vocab.txt", "fmd.svg",
                     "quality_diversity.csv", "quality_diversity.svg"):
            assert (run / name).is_file(), name
        ET.parse(run / "fmd.svg")

        gen = tmp_path / "gen"
        assert main(["generate", "--outdir", str(gen), "--checkpoint", str(run / "final.bin"),
                     "--n", "10"]) == 0
        lines = (gen / "samples.txt").read_text().splitlines()
        assert len(lines) == 10

        ev = tmp_path / "ev"
        samples = str(gen / "samples.txt")
        assert main(["eval", "--outdir", str(ev), "--candidates", samples, "--references", samples]) == 0
        header, values = read_rows(ev / "metrics.csv")
        assert float(values[header.index("bleu2")]) == 1.0

    def test_rerun_from_resolved_config(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--outdir", str(a), *TINY_TRAIN, "--seed", "4"]) == 0
        assert main(["train", "--outdir", str(b), "--config", str(a / "resolved.cfg")]) == 0
        assert (a / "resolved.cfg").read_text() == (b / "resolved.cfg").read_text()
        assert without_wall(read_rows(a / "metrics.csv")) == without_wall(read_rows(b / "metrics.csv"))
        assert (a / "final.bin").read_bytes() == (b / "final.bin").read_bytes()

    def test_ot_bench_two_by_two(self, tmp_path):
        (tmp_path / "c.txt").write_text("0.2 0.8\n0.7 0.1\n")
        assert main(["ot-bench", "--outdir", str(tmp_path), "--cost_file", str(tmp_path / "c.txt")]) == 0
        trace = read_rows(tmp_path / "ipot_0.csv")
        assert trace[0] == ["iter", "value", "residual"]
        assert float(trace[-1][1]) == pytest.approx(0.15, abs=1e-3)
        summary = read_rows(tmp_path / "metrics.csv")
        oracle = [r for r in summary[1:] if r[1] == "oracle"]
        assert float(oracle[0][3]) == pytest.approx(0.15, abs=1e-12)
        ET.parse(tmp_path / "convergence.svg")

    def test_ot_bench_random(self, tmp_path):
        assert main(["ot-bench", "--outdir", str(tmp_path), "--n", "4", "--instances", "2"]) == 0
        rows = read_rows(tmp_path / "metrics.csv")[1:]
        ipot_gaps = [abs(float(r[6])) for r in rows if r[1] == "ipot"]
        assert len(ipot_gaps) == 2 and max(ipot_gaps) < 1e-3

    @pytest.mark.parametrize("command,extra", [("style-train", ("nll", "accuracy")),
                                               ("cipher-train", ("cycle", "accuracy"))])
    def test_conditional_commands(self, tmp_path, command, extra):
        assert main([command, "--outdir", str(tmp_path), *TINY_COND]) == 0
        rows = read_rows(tmp_path / "metrics.csv")
        assert tuple(rows[0][-2:]) == extra
        evals = [r for r in rows[1:] if r[1] == "eval"]
        assert evals and evals[-1][-1] != ""
        assert (tmp_path / "final.bin").is_file()
        ET.parse(tmp_path / "fmd.svg")

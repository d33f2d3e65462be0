import json

import numpy as np
import pytest

from fedsel import audit, cli
from fedsel.data import load_sparse_text


def strip_wall_column(csv_text: str) -> str:
    lines = csv_text.strip().splitlines()
    drop = lines[0].split(",").index("wall_ms")
    return "\n".join(
        ",".join(cell for i, cell in enumerate(line.split(",")) if i != drop) for line in lines
    )


def run_cli(*argv) -> int:
    return cli.main(list(argv))


class TestGenData:
    def test_writes_loadable_file(self, tmp_path, capsys):
        out = tmp_path / "syn.txt"
        assert run_cli("gen-data", "--spec", "syn:6,40,0.2,0.9,3", "--out", str(out)) == 0
        ds = load_sparse_text(out)
        assert ds.d == 6 and len(ds) == 40
        assert "n=40" in capsys.readouterr().out

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        run_cli("gen-data", "--spec", "syn:5,30,0.2,0.9,1", "--out", str(a))
        run_cli("gen-data", "--spec", "syn:5,30,0.2,0.9,1", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_non_synthetic_spec(self, capsys):
        assert run_cli("gen-data", "--spec", "file.txt", "--out", "x") == 2
        assert "syn:" in capsys.readouterr().err


class TestRun:
    def run_once(self, tmp_path, name, **extra):
        out = tmp_path / name
        argv = [
            "run", "--dataset", "syn:8,120,0.2,0.9,2", "--solution", extra.pop("solution", "fedsel"),
            "--eps", "2", "--batch-size", "20", "--folds", "3", "--repeats", "1",
            "--seed", str(extra.pop("seed", 7)), "--out", str(out),
        ]
        for key, value in extra.items():
            argv += [key, str(value)]
        assert run_cli(*argv) == 0
        return out

    def test_writes_metrics_summary_and_ledger(self, tmp_path):
        out = self.run_once(tmp_path, "a")
        metrics = (out / "metrics.csv").read_text()
        header = metrics.splitlines()[0]
        assert header == "repeat,fold,t,epoch,acc_train,acc_test,misclass,bot_count,wall_ms"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["runs"] == 3
        assert 0.0 <= summary["mean_acc_test"] <= 1.0
        ledger_lines = (out / "ledger.txt").read_text().splitlines()
        assert ledger_lines[0].split() == ["client", "epoch", "spent"]
        assert len(ledger_lines) > 1

    def test_summary_recomputable_from_csv(self, tmp_path):
        out = self.run_once(tmp_path, "b")
        summary = json.loads((out / "summary.json").read_text())
        rows = (out / "metrics.csv").read_text().strip().splitlines()
        header = rows[0].split(",")
        finals = {}
        for row in rows[1:]:
            rec = dict(zip(header, row.split(",")))
            finals[(rec["repeat"], rec["fold"])] = float(rec["acc_test"])  # last row wins
        values = np.array(list(finals.values()))
        assert abs(values.mean() - summary["mean_acc_test"]) < 1e-9
        assert abs(values.std() - summary["std_acc_test"]) < 1e-9

    def test_same_seed_byte_identical_output(self, tmp_path):
        a = self.run_once(tmp_path, "a", seed=11)
        b = self.run_once(tmp_path, "b", seed=11)
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
        assert strip_wall_column((a / "metrics.csv").read_text()) == strip_wall_column(
            (b / "metrics.csv").read_text()
        )
        assert (a / "ledger.txt").read_bytes() == (b / "ledger.txt").read_bytes()

    def test_parallelism_does_not_change_results(self, tmp_path):
        a = self.run_once(tmp_path, "a", seed=13)
        b = self.run_once(tmp_path, "b", seed=13, **{"--jobs": 4})
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
        assert strip_wall_column((a / "metrics.csv").read_text()) == strip_wall_column(
            (b / "metrics.csv").read_text()
        )

    def test_unknown_mechanism_exits_2_naming_valid_set(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dataset=syn:6,60,0.2,0.9\nselection=topk\n")
        code = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == 2
        assert "exp, pe, ps" in capsys.readouterr().err

    def test_argparse_rejects_unknown_choice_with_exit_2(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run_cli("run", "--dataset", "syn:6,60,0.2,0.9", "--select", "topk")
        assert err.value.code == 2

    def test_missing_dataset_exits_2(self, capsys):
        assert run_cli("run", "--solution", "np") == 2
        assert "dataset" in capsys.readouterr().err

    def test_config_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            "dataset=syn:8,120,0.2,0.9,2\n"
            "solution=flat  # flag below overrides this\n"
            "epsilon=2\nbatch_size=20\nfolds=3\nseed=5\n"
        )
        out = tmp_path / "o"
        assert run_cli("run", "--config", str(cfg), "--solution", "np-k", "--out", str(out)) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["solution"] == "np-k"

    def test_bad_config_line_reports_location(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dataset=syn:6,60,0.2,0.9\nnot a config line\n")
        assert run_cli("run", "--config", str(cfg)) == 2
        assert "bad.cfg:2" in capsys.readouterr().err


class TestAudit:
    def test_exp_and_ps_grid_passes(self, capsys):
        code = run_cli(
            "audit", "--d", "2", "3", "4", "--k", "1", "2", "--eps1", "0.5", "2",
            "--eps2", "1", "--mechanisms", "exp", "ps", "--samples", "20000",
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "audit passed" in out

    def test_default_grid_detects_pe_violation(self, capsys):
        code = run_cli("audit", "--d", "2", "3", "--k", "1", "--eps1", "1.0",
                       "--eps2", "1", "--samples", "0")
        out = capsys.readouterr().out
        assert code == 1
        assert "FAIL" in out and "pe" in out

    def test_injected_faulty_mechanism_fails(self, capsys, monkeypatch):
        def broken_ps(status, epsilon1):
            return audit._ps_distribution(status, epsilon1 * 1.5)

        monkeypatch.setitem(audit._DISTRIBUTIONS, "ps", broken_ps)
        code = run_cli("audit", "--d", "4", "--k", "1", "--eps1", "1.0",
                       "--eps2", "1", "--mechanisms", "ps", "--samples", "0")
        assert code == 1
        assert "FAIL" in capsys.readouterr().out


class TestCompare:
    def write_cfg(self, tmp_path, name, solution, **extra):
        lines = [
            "dataset=syn:8,120,0.2,0.9,2",
            f"solution={solution}",
            "epsilon=2", "batch_size=20", "folds=2", "repeats=1", "seed=3",
        ]
        lines += [f"{k}={v}" for k, v in extra.items()]
        path = tmp_path / f"{name}.cfg"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_identical_configs_zero_gain(self, tmp_path, capsys):
        a = self.write_cfg(tmp_path, "a", "np-k")
        b = self.write_cfg(tmp_path, "b", "np-k")
        assert run_cli("compare", str(a), str(b)) == 0
        out = capsys.readouterr().out
        gain = float(out.strip().splitlines()[-1].split()[-1])
        assert gain == pytest.approx(0.0, abs=1e-12)

    def test_gain_table_lists_all_configs(self, tmp_path, capsys):
        a = self.write_cfg(tmp_path, "flat", "flat")
        b = self.write_cfg(tmp_path, "two-stage", "fedsel")
        assert run_cli("compare", str(a), str(b)) == 0
        out = capsys.readouterr().out
        assert "flat" in out and "two-stage" in out and "gain_pp" in out

    def test_mismatched_seed_rejected(self, tmp_path, capsys):
        a = self.write_cfg(tmp_path, "a", "np-k")
        b = self.write_cfg(tmp_path, "b", "np-k", seed=99)
        assert run_cli("compare", str(a), str(b)) == 2
        assert "seed" in capsys.readouterr().err

    def test_mismatched_dataset_rejected(self, tmp_path, capsys):
        a = self.write_cfg(tmp_path, "a", "np-k")
        b = self.write_cfg(tmp_path, "b", "np-k", dataset="syn:8,120,0.2,0.9,5")
        assert run_cli("compare", str(a), str(b)) == 2
        assert "dataset" in capsys.readouterr().err

import numpy as np

from privmarket.cli import main
from privmarket.envelope import encode_bit_vector


def read_all(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestSimulateCommand:
    def test_small_run_succeeds(self, tmp_path, capsys):
        code = main([
            "simulate", "--populations", "100,200", "--choices", "20", "--mean", "10",
            "--sd", "2", "--f", "0.5", "--seed", "42", "--trials", "2",
            "--out", str(tmp_path / "out"),
        ])
        assert code == 0
        names = {p.name for p in (tmp_path / "out").iterdir()}
        assert names == {
            "N100_trial000.csv", "N100_trial001.csv",
            "N200_trial000.csv", "N200_trial001.csv", "summary.csv",
        }
        out = capsys.readouterr().out
        assert "mean_l1_norm" in out

    def test_identical_flags_identical_files(self, tmp_path):
        flags = ["simulate", "--populations", "150", "--seed", "9", "--trials", "2"]
        assert main(flags + ["--out", str(tmp_path / "a")]) == 0
        assert main(flags + ["--out", str(tmp_path / "b")]) == 0
        assert read_all(tmp_path / "a") == read_all(tmp_path / "b")

    def test_invalid_flip_probability_is_usage_error(self, tmp_path):
        assert main(["simulate", "--f", "1.5", "--out", str(tmp_path)]) == 2

    def test_missing_out_is_usage_error(self):
        assert main(["simulate"]) == 2

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["obliterate"]) == 2


class TestDemoCommand:
    def test_demo_settles(self, tmp_path, capsys):
        code = main([
            "demo", "--operators", "5", "--nr", "3", "--fee", "100",
            "--f", "0.5", "--seed", "7", "--trace-out", str(tmp_path / "d"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("pay-operator") == 3
        assert "amount=26" in out  # floor(0.8 * 100 / 3)
        assert "final phase: SETTLED" in out
        assert "chain: OK" in out
        names = {p.name for p in (tmp_path / "d").iterdir()}
        assert names == {"trace.txt", "events.bin", "events.txt"}

    def test_demo_deterministic(self, tmp_path):
        flags = ["demo", "--operators", "4", "--nr", "2", "--seed", "13"]
        assert main(flags + ["--trace-out", str(tmp_path / "a")]) == 0
        assert main(flags + ["--trace-out", str(tmp_path / "b")]) == 0
        assert read_all(tmp_path / "a") == read_all(tmp_path / "b")

    def test_too_few_operators_fails(self, capsys):
        assert main(["demo", "--operators", "2", "--nr", "3"]) == 1
        assert "protocol failed" in capsys.readouterr().err

    def test_criteria_excluding_everyone_fails(self, tmp_path, capsys):
        criteria = tmp_path / "criteria.json"
        criteria.write_text('{"region": ["TAS"]}')
        code = main([
            "demo", "--operators", "5", "--nr", "2", "--criteria-file", str(criteria),
        ])
        assert code == 1

    def test_criteria_filtering_works(self, tmp_path, capsys):
        criteria = tmp_path / "criteria.json"
        criteria.write_text('{"region": ["NSW"]}')
        code = main([
            "demo", "--operators", "6", "--nr", "2", "--seed", "3",
            "--criteria-file", str(criteria),
        ])
        assert code == 0
        assert "eligible=2" in capsys.readouterr().out


class TestInspectCommand:
    def _demo_log(self, tmp_path):
        assert main([
            "demo", "--operators", "4", "--nr", "2", "--seed", "5",
            "--trace-out", str(tmp_path / "d"),
        ]) == 0
        return tmp_path / "d" / "events.bin"

    def test_intact_log_verifies(self, tmp_path, capsys):
        log_file = self._demo_log(tmp_path)
        assert main(["inspect-ledger", "--log-file", str(log_file)]) == 0
        assert "chain OK" in capsys.readouterr().out

    def test_mutated_log_detected(self, tmp_path, capsys):
        log_file = self._demo_log(tmp_path)
        data = bytearray(log_file.read_bytes())
        data[len(data) // 2] ^= 0x40
        bad = tmp_path / "mutated.bin"
        bad.write_bytes(bytes(data))
        assert main(["inspect-ledger", "--log-file", str(bad)]) == 1
        captured = capsys.readouterr()
        assert "BROKEN" in captured.out or "corrupt" in captured.err

    def test_truncated_log_names_bad_record(self, tmp_path, capsys):
        log_file = self._demo_log(tmp_path)
        bad = tmp_path / "truncated.bin"
        bad.write_bytes(log_file.read_bytes()[:-7])
        assert main(["inspect-ledger", "--log-file", str(bad)]) == 1
        assert "record" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["inspect-ledger", "--log-file", str(tmp_path / "nope.bin")]) == 1


class TestEstimateCommand:
    def test_f_zero_echoes_counts(self, tmp_path, capsys):
        vectors = [(1, 0, 0), (1, 0, 0), (0, 0, 1)]
        reports = tmp_path / "reports.bin"
        reports.write_bytes(b"".join(encode_bit_vector(v) for v in vectors))
        assert main(["estimate", "--reports-file", str(reports), "--f", "0"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "choice_index,ones,estimated_raw,estimated_clamped"
        assert lines[1] == "0,2,2.0,2.0"
        assert lines[2] == "1,0,0.0,0.0"
        assert lines[3] == "2,1,1.0,1.0"

    def test_denoised_estimate(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        vectors = [tuple(int(b) for b in rng.integers(0, 2, size=4)) for _ in range(10)]
        reports = tmp_path / "reports.bin"
        reports.write_bytes(b"".join(encode_bit_vector(v) for v in vectors))
        assert main(["estimate", "--reports-file", str(reports), "--f", "0.5"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 5

    def test_corrupt_reports_file(self, tmp_path, capsys):
        reports = tmp_path / "reports.bin"
        reports.write_bytes(encode_bit_vector((1, 0)) + b"\xff")
        assert main(["estimate", "--reports-file", str(reports), "--f", "0.5"]) == 1
        assert "corrupt" in capsys.readouterr().err

    def test_requires_f(self, tmp_path):
        reports = tmp_path / "reports.bin"
        reports.write_bytes(encode_bit_vector((1, 0)))
        assert main(["estimate", "--reports-file", str(reports)]) == 2


def test_help_exits_zero():
    assert main(["--help"]) == 0

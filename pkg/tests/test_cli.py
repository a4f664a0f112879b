"""Command-line surface: exit codes, formats, config merging, determinism."""

import json

import pytest

from transient_sim.cli import main
from transient_sim.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    default_seed,
    load_config,
)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestExitCodes:
    def test_profiles_lists_all_five(self, capsys):
        code, out, _ = run_cli(capsys, "profiles")
        assert code == 0
        for name in ("cortex_a53", "cortex_a8", "cortex_a9", "cortex_a72", "intel_i7"):
            assert name in out

    def test_successful_attack_exits_zero(self, capsys):
        code, out, _ = run_cli(
            capsys, "attack", "--variant", "v1", "--profile", "intel_i7"
        )
        assert code == 0
        assert json.loads(out)["success"] is True

    def test_failed_attack_exits_one(self, capsys):
        code, out, _ = run_cli(
            capsys, "attack", "--variant", "v1", "--profile", "cortex_a53"
        )
        assert code == 1
        assert json.loads(out)["success"] is False

    def test_unsupported_combination_exits_two(self, capsys):
        code, _, err = run_cli(
            capsys,
            "attack",
            "--variant",
            "rsb",
            "--scenario",
            "pagefault",
            "--profile",
            "intel_i7",
        )
        assert code == 2
        assert "error:" in err

    def test_unknown_profile_rejected_by_parser(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["attack", "--profile", "pentium_2"])
        assert exc.value.code == 2

    def test_missing_subcommand_is_a_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2


class TestCovertCommand:
    def test_defaults_deliver_hi(self, capsys):
        code, out, _ = run_cli(capsys, "covert")
        assert code == 0
        payload = json.loads(out)
        assert payload["decoded_hex"] == "4849"
        assert payload["required_memory_bytes"] == 512
        assert payload["bit_errors"] == 0

    def test_bits_flag_changes_footprint(self, capsys):
        code, out, _ = run_cli(capsys, "covert", "--bits", "5")
        assert code == 0
        assert json.loads(out)["required_memory_bytes"] == 2048

    def test_latency_trace_file(self, capsys, tmp_path):
        target = tmp_path / "trace.csv"
        code, _, _ = run_cli(
            capsys, "covert", "--message", "48", "--emit-latency-trace", str(target)
        )
        assert code == 0
        lines = target.read_text().splitlines()
        assert lines[0] == "symbol,line,latency"
        assert len(lines) > 1

    def test_mitigated_channel_exits_one(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {"experiment": "covert", "mitigations": {"privileged_flush": True}}
            )
        )
        code, out, _ = run_cli(capsys, "covert", "--config", str(cfg))
        assert code == 1
        assert json.loads(out)["aborted"] is True


class TestSweepCommand:
    def test_csv_by_default(self, capsys):
        code, out, _ = run_cli(capsys, "sweep-bits")
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "b,bandwidth,errors,memory"
        assert len(lines) == 7
        memories = [int(row.split(",")[3]) for row in lines[1:]]
        assert memories == [128, 256, 512, 1024, 2048, 4096]

    def test_json_on_request(self, capsys):
        code, out, _ = run_cli(capsys, "sweep-bits", "--format", "json")
        assert code == 0
        rows = json.loads(out)
        assert [r["bits_per_cs"] for r in rows] == [1, 2, 3, 4, 5, 6]


class TestMatrixCommand:
    def test_table_reports_empty_diff(self, capsys):
        code, out, _ = run_cli(capsys, "matrix")
        assert code == 0
        assert "diff against golden tables: empty" in out
        assert "Y" in out and "N" in out

    def test_byte_identical_across_runs(self, capsys):
        code1, out1, _ = run_cli(capsys, "matrix", "--seed", "7", "--format", "json")
        code2, out2, _ = run_cli(capsys, "matrix", "--seed", "7", "--format", "json")
        assert (code1, code2) == (0, 0)
        assert out1 == out2


class TestMitigateCommand:
    def test_privileged_flush_summary(self, capsys):
        code, out, _ = run_cli(
            capsys, "mitigate", "--flags", "privileged_flush", "--profile", "intel_i7"
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["channel_aborted"] is True
        assert payload["flipped_cells"]

    def test_refill_reports_bypass(self, capsys):
        code, out, _ = run_cli(
            capsys, "mitigate", "--flags", "rsb_refill_on_cs", "--profile", "intel_i7"
        )
        assert code == 0
        assert json.loads(out)["refill_bypass_success"] is True

    def test_pmu_amplitude_reports_accuracy(self, capsys):
        code, out, _ = run_cli(
            capsys, "mitigate", "--flags", "pmu_noise_amplitude=98"
        )
        assert code == 0
        accuracy = json.loads(out)["classifier_accuracy"]
        assert 0.5 < accuracy < 1.0

    def test_unknown_flag_is_a_config_error(self, capsys):
        code, _, err = run_cli(capsys, "mitigate", "--flags", "magic_shield")
        assert code == 2
        assert "error:" in err


class TestConfigFiles:
    def test_minimal_config_fills_defaults(self):
        cfg = config_from_dict(
            {"experiment": "attack", "variant": "v1", "profile": "cortex_a72"}
        )
        assert cfg.scenario == "cachemiss"
        assert cfg.bits == 3
        assert cfg.output == "json"

    def test_cli_flags_override_config_file(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(
            json.dumps({"experiment": "attack", "variant": "v1", "profile": "cortex_a53"})
        )
        code, out, _ = run_cli(
            capsys, "attack", "--config", str(path), "--profile", "intel_i7"
        )
        assert code == 0
        assert json.loads(out)["profile"] == "intel_i7"

    def test_profile_override_reaches_the_profile(self):
        cfg = config_from_dict(
            {"experiment": "attack", "profile_overrides": {"dram": 150}}
        )
        assert cfg.resolved_profile().latencies.dram == 150

    def test_rsb_size_invariant_enforced(self):
        with pytest.raises(ConfigError, match=r"\[4, 32\]"):
            config_from_dict(
                {"experiment": "attack", "profile_overrides": {"rsb_size": 64}}
            )

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"experiment": "attack", "warp_drive": 1}))
        with pytest.raises(ConfigError, match="warp_drive"):
            load_config(str(path))

    def test_json_error_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"experiment": }')
        with pytest.raises(ConfigError, match=r"broken\.json:1:16"):
            load_config(str(path))

    def test_missing_file_is_a_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "absent.json"))

    def test_bad_hex_rejected_on_use(self):
        cfg = config_from_dict({"experiment": "covert", "message_hex": "zz"})
        with pytest.raises(ConfigError, match="not valid hex"):
            cfg.message_bytes()

    def test_with_updates_ignores_none(self):
        cfg = ExperimentConfig(experiment="covert", bits=4)
        assert cfg.with_updates(bits=None).bits == 4
        assert cfg.with_updates(bits=2).bits == 2


class TestSeedHandling:
    def test_env_var_sets_default_seed(self, monkeypatch):
        monkeypatch.setenv("TRANSIENT_SIM_SEED", "42")
        assert default_seed() == 42
        monkeypatch.delenv("TRANSIENT_SIM_SEED")
        assert default_seed() == 7

    def test_garbage_env_seed_rejected(self, monkeypatch):
        monkeypatch.setenv("TRANSIENT_SIM_SEED", "soon")
        with pytest.raises(ConfigError):
            default_seed()

    def test_env_seed_reaches_reports_and_cli_flag_wins(self, capsys, monkeypatch):
        monkeypatch.setenv("TRANSIENT_SIM_SEED", "42")
        code, out, _ = run_cli(capsys, "matrix", "--format", "json")
        assert code == 0
        assert json.loads(out)["seed"] == 42
        code, out, _ = run_cli(capsys, "matrix", "--seed", "9", "--format", "json")
        assert code == 0
        assert json.loads(out)["seed"] == 9

"""Harness tests: analytic formulas, config validation, scenario runs, and
adversary behavior end to end."""

import json
from fractions import Fraction
from random import Random

import pytest

from canvault import harness, kem
from canvault.bus import SimReport
from canvault.errors import ConfigError, DeadlockError, DomainError, \
    RunCheckError
from canvault.group import get_group
from canvault.harness import (ScenarioConfig, Scheme, affine_fit,
                              comparison_ratios, comparison_table,
                              computation_tally_us, expected_messages,
                              load_latency_profile, run_scenario,
                              write_keyfile)


class TestMessageFormulas:
    def test_closed_forms(self):
        assert expected_messages(Scheme.OURS, 2) == 5
        assert expected_messages(Scheme.OURS, 35) == 71
        assert expected_messages(Scheme.CARVAJAL_ROCA, 35) == 176
        assert expected_messages(Scheme.MUSUROI, 1) == 4
        assert expected_messages(Scheme.MUSUROI, 35) == 276

    def test_positive_for_all_small_sizes(self):
        for n in range(1, 41):
            for scheme in Scheme:
                assert expected_messages(scheme, n) >= 1

    def test_domain_error_below_one(self):
        for scheme in Scheme:
            with pytest.raises(DomainError):
                expected_messages(scheme, 0)

    def test_ratios_at_worst_case(self):
        vs_carvajal, vs_musuroi = comparison_ratios(35)
        assert vs_carvajal == Fraction(71, 176)
        assert vs_musuroi == Fraction(71, 276)
        assert abs(float(vs_carvajal) * 100 - 40.34) <= 0.01
        assert abs(float(vs_musuroi) * 100 - 25.72) <= 0.01

    def test_ratio_for_singleton_group(self):
        vs_carvajal, vs_musuroi = comparison_ratios(1)
        assert vs_carvajal == Fraction(1, 2)
        assert vs_musuroi == Fraction(3, 4)

    def test_comparison_table_shape(self):
        rows = comparison_table([2, 15, 25, 35])
        assert len(rows) == 12
        ours_rows = [r for r in rows if r["scheme"] == "ours"]
        assert all(r["percent_of_ours"] == 100.0 for r in ours_rows)
        worst = [r for r in rows if r["n"] == 35 and r["scheme"] == "carvajal-roca"]
        assert worst[0]["messages"] == 176
        assert worst[0]["percent_of_ours"] == 40.34


class TestComputationTally:
    def test_stm32_tallies(self):
        table = load_latency_profile("stm32")[1]["secu"]
        assert computation_tally_us(Scheme.OURS, table) == \
            5 * 3000 + 4 * 40 + 6 * 300 + 4 * 40 + 2 * 40
        assert computation_tally_us(Scheme.CARVAJAL_ROCA, table) == \
            6 * 3000 + 2 * 40 + 4 * 40
        assert computation_tally_us(Scheme.MUSUROI, table) == \
            2870 + 2 * 4460 + 4 * 3000 + 4 * 40

    def test_tally_none_without_signature_timings(self):
        table = load_latency_profile("w806")[1]["secu"]
        assert computation_tally_us(Scheme.MUSUROI, table) is None
        assert computation_tally_us(Scheme.OURS, table) is not None


class TestAffineFit:
    def test_exact_line_has_zero_residual(self):
        xs = [2, 15, 25, 35]
        ys = [7 + 3 * x for x in xs]
        a, b, res = affine_fit(xs, ys)
        assert abs(a - 7) < 1e-9 and abs(b - 3) < 1e-9
        assert res < 1e-12

    def test_constant_series(self):
        a, b, res = affine_fit([2, 15, 25, 35], [10, 10, 10, 10])
        assert abs(b) < 1e-12 and res < 1e-12

    def test_noisy_line_reports_residual(self):
        _, _, res = affine_fit([1, 2, 3, 4], [10, 21, 29, 41])
        assert res > 0.01


class TestConfigValidation:
    def base(self, **overrides):
        raw = {"group": "toy23", "n_ecus": 2}
        raw.update(overrides)
        return raw

    def test_minimal_config_parses_with_defaults(self):
        cfg = ScenarioConfig.from_dict(self.base())
        assert cfg.latency_profile == "stm32"
        assert cfg.bitrate_bps == 1_000_000
        assert cfg.ctr_max == 65_535

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(self.base(extra=1))

    def test_missing_required_keys_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"group": "toy23"})

    @pytest.mark.parametrize("bad", [
        {"n_ecus": 0}, {"n_ecus": -3}, {"group": "foo"}, {"ctr_max": 0},
        {"post_ticks": -1}, {"rng_seed": -1}, {"replay_cache_size": 0},
        {"phase4_sender": 5}, {"n_ecus": True}, {"bitrate_bps": "fast"},
        {"adversary": [{"action": "melt"}]},
        {"adversary": [{"action": "tamper", "target": "group_secret"}]},
        {"adversary": [{"action": "tamper", "target": "nope", "bit": 0}]},
        {"adversary": [{"action": "replay", "target": "seed_broadcast",
                        "bit": 3}]},
    ])
    def test_invalid_configs_rejected(self, bad):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(self.base(**bad))

    def test_tamper_bit_must_fit_body(self):
        cfg = ScenarioConfig.from_dict(self.base(
            adversary=[{"action": "tamper", "target": "seed_broadcast",
                        "bit": 48 * 8}]))
        with pytest.raises(ConfigError):
            run_scenario(cfg)

    def test_unknown_profile_rejected(self):
        with pytest.raises(ConfigError):
            load_latency_profile("pentium")

    def test_custom_profile_roundtrip(self, tmp_path):
        table = {"secu": {"eccdh": 10, "hkdf": 2, "aes": 1, "hmac": 1},
                 "ecu": {"eccdh": 20, "hkdf": 2, "aes": 1, "hmac": 1}}
        path = tmp_path / "prof.json"
        path.write_text(json.dumps(table))
        name, loaded = load_latency_profile(f"custom:{path}")
        assert loaded == table
        report = run_scenario(ScenarioConfig(
            group="toy23", n_ecus=1, latency_profile=f"custom:{path}"))
        # encap 10 + tx 176 + decap 20
        assert report.phase_times["pairwise"]["elapsed_us"] == 206

    def test_custom_profile_missing_ops_rejected(self, tmp_path):
        path = tmp_path / "prof.json"
        path.write_text(json.dumps({"secu": {"eccdh": 1}, "ecu": {"eccdh": 1}}))
        with pytest.raises(ConfigError):
            load_latency_profile(f"custom:{path}")


class TestHonestScenarios:
    def test_reference_run(self):
        report = run_scenario(ScenarioConfig(group="schnorr256", n_ecus=2))
        assert report.logical_messages == 5
        assert report.expected_messages == 5
        assert report.converged == {"pairwise": True, "group_secret": True,
                                    "session": True}
        assert not report.partially_keyed
        assert all(report.checks.values())
        assert report.rejections == []

    @pytest.mark.parametrize("n", [1, 2, 15])
    def test_message_budget(self, n):
        report = run_scenario(ScenarioConfig(group="toy23", n_ecus=n))
        assert report.logical_messages == 2 * n + 1

    def test_message_budget_full_sweep(self):
        for n in range(1, 41):
            report = run_scenario(ScenarioConfig(group="toy23", n_ecus=n))
            assert report.logical_messages == expected_messages(Scheme.OURS, n)

    def test_phase_times_affine_in_group_size(self):
        sizes = [2, 15, 25, 35]
        elapsed = {"pairwise": [], "group_secret": [], "session": []}
        for n in sizes:
            report = run_scenario(ScenarioConfig(group="toy23", n_ecus=n))
            for phase, series in elapsed.items():
                series.append(report.phase_times[phase]["elapsed_us"])
        for series in elapsed.values():
            _, _, res = affine_fit(sizes, series)
            assert res < 0.01

    def test_report_json_round_trip(self):
        report = run_scenario(ScenarioConfig(group="toy23", n_ecus=3,
                                             post_ticks=5, ctr_max=2))
        assert SimReport.from_json(report.to_json()) == report

    def test_phase4_sender_override(self):
        report = run_scenario(ScenarioConfig(group="toy23", n_ecus=3,
                                             phase4_sender=2))
        assert report.converged["session"]

    def test_refresh_counting(self):
        report = run_scenario(ScenarioConfig(group="toy23", n_ecus=2,
                                             ctr_max=4, post_ticks=15))
        assert report.data_frames == 15
        assert report.refresh_events == 3      # one rotation per 5 ticks
        assert report.converged["session"]


class TestKeyfiles:
    def test_keyfile_run_matches_inline_run(self, tmp_path):
        group = get_group("toy23")
        rng = Random("canvault:9:keygen")
        keypairs = [kem.keygen(group, i, rng) for i in range(3)]
        path = tmp_path / "params.json"
        write_keyfile(str(path), group, keypairs)
        data = json.loads(path.read_text())
        assert data["simulation_only"] is True

        inline = run_scenario(ScenarioConfig(group="toy23", n_ecus=3, rng_seed=9))
        from_file = run_scenario(ScenarioConfig(group="toy23", n_ecus=3,
                                                rng_seed=9, keyfile=str(path)))
        assert inline == from_file

    def test_keyfile_validation(self, tmp_path):
        group = get_group("toy23")
        keypairs = [kem.keygen(group, 0, Random(0))]
        path = tmp_path / "params.json"
        write_keyfile(str(path), group, keypairs)

        with pytest.raises(ConfigError):    # wrong group
            run_scenario(ScenarioConfig(group="schnorr256", n_ecus=1,
                                        keyfile=str(path)))
        with pytest.raises(ConfigError):    # not enough keypairs
            run_scenario(ScenarioConfig(group="toy23", n_ecus=2,
                                        keyfile=str(path)))

        data = json.loads(path.read_text())
        data["keypairs"][0]["u"] = "1"      # inconsistent public value
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigError):
            run_scenario(ScenarioConfig(group="toy23", n_ecus=1,
                                        keyfile=str(path)))


class TestAdversaryScenarios:
    def test_tamper_group_secret_hits_only_target(self):
        cfg = ScenarioConfig(group="toy23", n_ecus=2, adversary=[
            {"action": "tamper", "target": "group_secret", "occurrence": 1,
             "bit": 100}])
        report = run_scenario(cfg)
        assert report.partially_keyed
        assert report.converged["pairwise"]
        assert not report.converged["group_secret"]
        assert any(r["node"] == "ecu1" and r["reason"] == "mac"
                   for r in report.rejections)
        assert all(report.checks.values())
        assert report.logical_messages == 5

    def test_tamper_pairwise_rejected(self):
        cfg = ScenarioConfig(group="toy23", n_ecus=2, adversary=[
            {"action": "tamper", "target": "pairwise_cipher", "occurrence": 1,
             "bit": 9}])
        report = run_scenario(cfg)
        reasons = {r["reason"] for r in report.rejections
                   if r["node"] == "ecu1"}
        assert reasons & {"consistency", "decode"}
        assert not report.converged["pairwise"]

    def test_replay_seed_broadcast_discarded_by_all_units(self):
        cfg = ScenarioConfig(group="toy23", n_ecus=3, adversary=[
            {"action": "replay", "target": "seed_broadcast"}])
        report = run_scenario(cfg)
        replayers = {r["node"] for r in report.rejections
                     if r["reason"] == "replay"}
        assert replayers == {"ecu0", "ecu1", "ecu2"}
        assert report.converged["session"]
        assert report.logical_messages == 7     # replays are not counted

    def test_forged_pairwise_rejected_at_target(self):
        cfg = ScenarioConfig(group="toy23", n_ecus=2, adversary=[
            {"action": "forge", "target": "pairwise_cipher", "receiver": 0}])
        report = run_scenario(cfg)
        assert any(r["node"] == "ecu0" and r["reason"] == "consistency"
                   for r in report.rejections)
        assert report.converged["pairwise"]     # honest message still lands

    def test_tampering_the_seed_sender_stalls_the_session_phase(self):
        cfg = ScenarioConfig(group="toy23", n_ecus=2, adversary=[
            {"action": "tamper", "target": "group_secret", "occurrence": 0,
             "bit": 5}])
        with pytest.raises(DeadlockError):
            run_scenario(cfg)


class TestRunChecks:
    def test_check_failure_raises_with_report_attached(self, monkeypatch):
        monkeypatch.setattr(harness, "expected_messages",
                            lambda scheme, n: 999)
        with pytest.raises(RunCheckError) as err:
            run_scenario(ScenarioConfig(group="toy23", n_ecus=2))
        assert err.value.report is not None
        assert not err.value.report.checks["message_count"]

    def test_non_strict_returns_failing_report(self, monkeypatch):
        monkeypatch.setattr(harness, "expected_messages",
                            lambda scheme, n: 999)
        report = run_scenario(ScenarioConfig(group="toy23", n_ecus=2),
                              strict=False)
        assert not report.checks["message_count"]

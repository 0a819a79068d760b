"""End-to-end tests for dataset files, configs, and the CLI subcommands."""

import json
import textwrap

import numpy as np
import pytest
import yaml

from stem_fuse import cli, synth
from stem_fuse.model import Dataset, SubjectRecord

ENGINE_SECTION = {
    "engine": {
        "max_iters": 60,
        "burn_in": 20,
        "conv_window": 10,
        "n_posterior_draws": 100,
        "seed": 3,
    }
}


def write_config(path, extra=None):
    cfg = dict(ENGINE_SECTION)
    if extra:
        cfg.update(extra)
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def small_dataset(seed: int = 0, n: int = 60, missing: float = 0.0) -> Dataset:
    rng = np.random.default_rng(seed)
    params = synth.sample_true_params(3, 1, 0.85, 0.85, rng)
    data, _ = synth.generate(params, n, 3, 1, rng)
    if missing:
        data = synth.mask_tests(data, missing, np.random.default_rng(seed + 1))
    return data


def read_table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest: ")
    header = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return header, rows


class TestIngestRoundTrip:
    def test_write_then_ingest_reproduces_dataset(self, tmp_path):
        data = small_dataset(seed=1)
        path = tmp_path / "data.csv"
        cli.write_dataset(data, path)
        back, warnings_ = cli.ingest(path)
        assert warnings_ == []
        assert len(back) == len(data)
        assert back.k_symptoms == 3 and back.m_factors == 1
        for orig, new in zip(data.records, back.records):
            assert new.id == orig.id
            assert new.test_result == orig.test_result
            assert new.symptomatic == orig.symptomatic
            assert np.array_equal(new.symptoms, orig.symptoms)
            assert np.array_equal(new.risk_factors, orig.risk_factors)

    def test_round_trip_preserves_missing_tests(self, tmp_path):
        data = small_dataset(seed=2, missing=0.3)
        path = tmp_path / "data.csv"
        cli.write_dataset(data, path)
        back, _ = cli.ingest(path)
        orig_missing = [r.test_result is None for r in data.records]
        new_missing = [r.test_result is None for r in back.records]
        assert orig_missing == new_missing
        assert sum(new_missing) == 18

    def test_embedded_manifest_line_is_skipped(self, tmp_path):
        data = small_dataset(seed=3, n=10)
        manifest = cli.RunManifest("0.0", "simulate", 1, {})
        path = tmp_path / "data.csv"
        cli.write_dataset(data, path, manifest)
        assert path.read_text().startswith("# manifest: ")
        back, _ = cli.ingest(path)
        assert len(back) == 10


class TestIngestSchema:
    def make(self, tmp_path, body: str):
        path = tmp_path / "data.csv"
        path.write_text(textwrap.dedent(body))
        return path

    def test_symptomatic_derived_when_column_absent(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,X1,X2,Y1
            a,1,0,0,0.5
            b,0,1,0,-0.25
            """,
        )
        data, warnings_ = cli.ingest(path)
        assert warnings_ == []
        assert [r.symptomatic for r in data.records] == [0, 1]

    def test_missing_test_tokens(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,S,X1,Y1
            a,,0,0,0.0
            b,NA,0,0,0.0
            c,1,0,0,0.0
            """,
        )
        data, _ = cli.ingest(path)
        assert [r.test_result for r in data.records] == [None, None, 1]

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            # a comment
            id,T,S,X1,Y1

            a,1,0,0,0.0
            # another
            b,0,0,0,1.0
            """,
        )
        data, _ = cli.ingest(path)
        assert [r.id for r in data.records] == ["a", "b"]

    def test_malformed_row_reports_true_line_number(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            # leading comment
            id,T,S,X1,Y1
            a,1,0,0,0.0
            b,1,0,zero,0.0
            """,
        )
        with pytest.raises(cli.IngestError, match=r"data\.csv:4: malformed row"):
            cli.ingest(path)

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,S,X1,Y1
            a,1,0,0
            """,
        )
        with pytest.raises(cli.IngestError, match=r":2: expected 5 fields, got 4"):
            cli.ingest(path)

    @pytest.mark.parametrize(
        "header",
        ["T,id,X1,Y1", "id,S,X1,Y1", "id,T,S,Y1", "id,T,X2,X1,Y1"],
    )
    def test_rejects_bad_headers(self, tmp_path, header):
        path = self.make(tmp_path, f"{header}\na,1,0,0\n")
        with pytest.raises(cli.IngestError):
            cli.ingest(path)

    def test_empty_file_rejected(self, tmp_path):
        path = self.make(tmp_path, "# only comments\n\n")
        with pytest.raises(cli.IngestError, match="no header row"):
            cli.ingest(path)

    def test_violation_dropped_with_warning(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,S,X1,Y1
            a,1,0,1,0.0
            b,0,1,1,0.5
            """,
        )
        data, warnings_ = cli.ingest(path)
        assert [r.id for r in data.records] == ["b"]
        assert len(warnings_) == 1
        assert ":2:" in warnings_[0]
        assert "asymptomatic" in warnings_[0]

    def test_strict_turns_violations_into_errors(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,S,X1,Y1
            a,1,0,1,0.0
            """,
        )
        with pytest.raises(cli.IngestError, match="validation failed"):
            cli.ingest(path, strict=True)

    def test_duplicate_id_keeps_first_occurrence(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,S,X1,Y1
            a,1,0,0,0.0
            b,0,0,0,0.0
            a,0,0,0,9.0
            """,
        )
        data, warnings_ = cli.ingest(path)
        assert [r.id for r in data.records] == ["a", "b"]
        assert data.records[0].test_result == 1
        assert len(warnings_) == 1
        assert ":4:" in warnings_[0] and "duplicate" in warnings_[0]

    def test_out_of_domain_test_rejected(self, tmp_path):
        path = self.make(
            tmp_path,
            """\
            id,T,S,X1,Y1
            a,2,0,0,0.0
            b,1,0,0,0.0
            """,
        )
        data, warnings_ = cli.ingest(path)
        assert [r.id for r in data.records] == ["b"]
        assert any("test" in w for w in warnings_)


class TestManifest:
    def test_embedded_line_excludes_timing(self):
        manifest = cli.RunManifest("1.0", "fit", 7, {"a": 1}, {"data": "ff" * 32})
        manifest.timing_seconds = 12.5
        line = manifest.embed_line()
        assert line.startswith("# manifest: ")
        payload = json.loads(line[len("# manifest: "):])
        assert "timing_seconds" not in payload
        assert payload["seed"] == 7
        assert manifest.full_dict()["timing_seconds"] == 12.5

    def test_deterministic_serialization(self):
        a = cli.RunManifest("1.0", "fit", 7, {"b": 2, "a": 1})
        b = cli.RunManifest("1.0", "fit", 7, {"a": 1, "b": 2})
        assert a.embed_line() == b.embed_line()


class TestConfigParsing:
    def test_prior_forms(self):
        hyper = cli.build_hyper(
            {
                "priors": {
                    "sensitivity": {"mean": 0.8, "variance": 0.01},
                    "false_positive_rate": {"alpha": 2, "beta": 8},
                    "symptomatic_if_healthy": "noninformative",
                    "symptoms_healthy": {"alpha": 1, "beta": 3},
                    "symptoms_infected": [
                        {"alpha": 1, "beta": 1},
                        {"mean": 0.6, "variance": 0.02},
                    ],
                }
            },
            k_symptoms=2,
        )
        assert hyper.sensitivity_prior.mean == pytest.approx(0.8)
        assert hyper.sensitivity_prior.variance == pytest.approx(0.01)
        assert (hyper.false_positive_prior.alpha, hyper.false_positive_prior.beta) == (2, 8)
        assert hyper.symptomatic_if_healthy_prior.alpha == 0.5
        assert all(p.beta == 3 for p in hyper.symptom_priors_healthy)
        assert hyper.symptom_priors_infected[1].mean == pytest.approx(0.6)

    def test_default_hyper_sections(self):
        hyper = cli.build_hyper({}, k_symptoms=3)
        assert hyper.sensitivity_prior.alpha == 0.5
        assert hyper.weight_scale == 10.0
        assert hyper.noise_scale == 0.5
        assert hyper.imputed_sensitivity_prior.alpha == 2
        assert len(hyper.symptom_priors_healthy) == 3

    def test_bad_prior_spec_rejected(self):
        with pytest.raises(cli.IngestError, match="prior 'sensitivity'"):
            cli.build_hyper({"priors": {"sensitivity": {"mu": 0.5}}}, 1)
        with pytest.raises(cli.IngestError, match="length 2"):
            cli.build_hyper(
                {"priors": {"symptoms_healthy": [{"alpha": 1, "beta": 1}]}}, 2
            )

    def test_engine_section_and_flag_overrides(self):
        cfg = {
            "engine": {
                "max_iters": 80,
                "burn_in": 30,
                "seed": 5,
                "missing_t": "impute",
                "beta_loss": "squared",
            }
        }
        args = cli._build_parser().parse_args(
            ["fit", "--data", "d", "--out", "o", "--seed", "9",
             "--missing-t", "truncated", "--beta-loss", "bernoulli"]
        )
        config = cli.build_engine_config(cfg, args)
        assert config.max_iters == 80
        assert config.burn_in == 30
        assert config.seed == 9
        assert config.missing_t_mode == "truncated"
        assert config.beta_loss == "bernoulli"

    def test_impute_alias_resolves_to_joint(self):
        args = cli._build_parser().parse_args(["fit", "--data", "d", "--out", "o"])
        config = cli.build_engine_config({"engine": {"missing_t": "impute"}}, args)
        assert config.missing_t_mode == "joint_imputation"

    def test_config_must_be_mapping(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(cli.IngestError, match="mapping"):
            cli.load_config(path)


class TestSimulate:
    def test_writes_ingestible_dataset_and_truth(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "c.yaml",
            {"simulate": {"n": 50, "k_symptoms": 3, "m_factors": 1}},
        )
        out = tmp_path / "sim"
        assert cli.main(["simulate", "--config", config, "--out", str(out)]) == 0
        data, warnings_ = cli.ingest(out / "dataset.csv")
        assert warnings_ == []
        assert len(data) == 50
        header, rows = read_table(out / "truth.csv")
        assert header == ["id", "diagnosis"]
        assert [row[0] for row in rows] == [r.id for r in data.records]
        assert set(row[1] for row in rows) <= {"0", "1"}
        payload = json.loads((out / "true_params.json").read_text())
        assert payload["true_params"]["sensitivity"] == 0.8
        assert (out / "run_log.json").exists()

    def test_seed_flag_changes_draw(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "c.yaml", {"simulate": {"n": 30, "k_symptoms": 3, "m_factors": 1}}
        )
        for seed, name in ((5, "a"), (6, "b"), (5, "c")):
            assert cli.main(
                ["simulate", "--config", config, "--out", str(tmp_path / name),
                 "--seed", str(seed)]
            ) == 0
        a = (tmp_path / "a" / "dataset.csv").read_bytes()
        b = (tmp_path / "b" / "dataset.csv").read_bytes()
        c = (tmp_path / "c" / "dataset.csv").read_bytes()
        assert a != b
        assert a == c


@pytest.fixture()
def fitted(tmp_path, capsys):
    """A simulated cohort plus one completed fit run."""
    config = write_config(
        tmp_path / "c.yaml",
        {
            "simulate": {"n": 60, "k_symptoms": 3, "m_factors": 1},
            "priors": {
                "sensitivity": {"mean": 0.85, "variance": 0.002},
                "false_positive_rate": {"mean": 0.15, "variance": 0.002},
            },
        },
    )
    sim = tmp_path / "sim"
    assert cli.main(["simulate", "--config", config, "--out", str(sim)]) == 0
    data = str(sim / "dataset.csv")
    out = tmp_path / "fit"
    assert cli.main(["fit", "--config", config, "--data", data, "--out", str(out)]) == 0
    return config, data, out, tmp_path


class TestFit:
    REPORTS = (
        "fit_summary.json",
        "chain_parameters.csv",
        "subject_posteriors.csv",
        "parameter_posteriors.csv",
    )

    def test_reports_written_and_consistent(self, fitted):
        _, _, out, _ = fitted
        for name in self.REPORTS + ("run_log.json",):
            assert (out / name).exists(), name
        summary = json.loads((out / "fit_summary.json").read_text())
        assert summary["n_iters"] == 60
        assert summary["stop_reason"] in ("max_iters", "converged")
        assert summary["burn_in"] == 20
        assert 0.0 <= summary["params_mean"]["sensitivity"] <= 1.0
        assert summary["manifest"]["command"] == "fit"
        assert set(summary["manifest"]["input_digests"]) == {"config", "data"}

        header, rows = read_table(out / "chain_parameters.csv")
        assert header[0] == "iteration"
        assert len(rows) == 60
        assert "sensitivity" in header and "risk_weights[0]" in header

        header, rows = read_table(out / "subject_posteriors.csv")
        assert header == ["id", "test_result", "mean", "lower_95", "upper_95"]
        assert len(rows) == 60
        for row in rows:
            mean, lo, hi = float(row[2]), float(row[3]), float(row[4])
            assert 0.0 <= lo <= hi <= 1.0
            assert lo <= mean <= hi or abs(mean - np.clip(mean, lo, hi)) < 1e-9

        header, rows = read_table(out / "parameter_posteriors.csv")
        names = [row[0] for row in rows]
        assert "sensitivity" in names
        assert any(name.startswith("risk_weights[") for name in names)
        sens_row = rows[names.index("sensitivity")]
        assert float(sens_row[4]) > 0 and float(sens_row[5]) > 0
        weight_row = rows[names.index("risk_weights[0]")]
        assert weight_row[4] == "" and weight_row[5] == ""

    def test_rerun_is_byte_identical(self, fitted):
        config, data, out, tmp_path = fitted
        out2 = tmp_path / "fit2"
        assert cli.main(["fit", "--config", config, "--data", data, "--out", str(out2)]) == 0
        for name in self.REPORTS:
            assert (out / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_seed_override_changes_chain(self, fitted):
        config, data, _, tmp_path = fitted
        outs = []
        for seed, name in ((11, "s11"), (12, "s12")):
            out = tmp_path / name
            assert cli.main(
                ["fit", "--config", config, "--data", data, "--out", str(out),
                 "--seed", str(seed)]
            ) == 0
            outs.append((out / "chain_parameters.csv").read_bytes())
        assert outs[0] != outs[1]

    def test_missing_t_modes_run(self, fitted, tmp_path):
        config, _, _, base = fitted
        data = base / "masked.csv"
        cli.write_dataset(small_dataset(seed=4, missing=0.25), data)
        for mode in ("impute", "truncated"):
            out = base / f"fit_{mode}"
            assert cli.main(
                ["fit", "--config", config, "--data", str(data), "--out", str(out),
                 "--missing-t", mode]
            ) == 0
            header, _ = read_table(out / "chain_parameters.csv")
            has_imputed = "imputed_sensitivity" in header
            assert has_imputed == (mode == "impute")

    def test_beta_loss_flag_respected(self, fitted):
        config, data, _, tmp_path = fitted
        out = tmp_path / "bernoulli"
        assert cli.main(
            ["fit", "--config", config, "--data", data, "--out", str(out),
             "--beta-loss", "bernoulli"]
        ) == 0
        summary = json.loads((out / "fit_summary.json").read_text())
        resolved = summary["manifest"]["config"]["resolved_engine"]
        assert resolved["beta_loss"] == "bernoulli"

    def test_validation_warnings_on_stderr_keep_exit_zero(self, fitted, capsys):
        config, _, _, base = fitted
        data = base / "tainted.csv"
        data.write_text(
            "id,T,S,X1,X2,X3,Y1\n"
            "bad,1,0,1,0,0,0.0\n"
            + "".join(
                f"s{i},{i % 2},0,0,0,0,{i / 10:.1f}\n" for i in range(20)
            )
        )
        out = base / "warned"
        code = cli.main(["fit", "--config", config, "--data", str(data), "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert "warning:" in captured.err and "asymptomatic" in captured.err
        assert cli.main(
            ["fit", "--config", config, "--data", str(data), "--out", str(out), "--strict"]
        ) == 1
        assert "error:" in capsys.readouterr().err


class TestDiagnose:
    def test_table_shape_and_determinism(self, fitted, capsys):
        config, data, _, tmp_path = fitted
        out1, out2 = tmp_path / "d1", tmp_path / "d2"
        for out in (out1, out2):
            assert cli.main(
                ["diagnose", "--config", config, "--data", data, "--out", str(out)]
            ) == 0
        assert (out1 / "diagnose.csv").read_bytes() == (out2 / "diagnose.csv").read_bytes()
        header, rows = read_table(out1 / "diagnose.csv")
        assert header[:2] == ["id", "test_result"]
        assert header[-1] == "flag"
        assert len(rows) == 60

    def test_discordant_subject_flagged(self, tmp_path, capsys):
        # Cohort where symptoms track the test tightly, plus one subject
        # whose negative test contradicts a fully symptomatic panel.
        rows = ["id,T,S,X1,X2,X3,Y1"]
        for i in range(20):
            rows.append(f"pos{i},1,1,1,1,{i % 2},0.2")
        for i in range(20):
            rows.append(f"neg{i},0,0,0,0,0,-0.2")
        rows.append("odd,0,1,1,1,1,0.2")
        data = tmp_path / "cohort.csv"
        data.write_text("\n".join(rows) + "\n")
        config = write_config(
            tmp_path / "c.yaml",
            {
                "priors": {
                    "sensitivity": {"mean": 0.85, "variance": 0.002},
                    "false_positive_rate": {"mean": 0.1, "variance": 0.002},
                }
            },
        )
        out = tmp_path / "diag"
        assert cli.main(["diagnose", "--config", config, "--data", str(data), "--out", str(out)]) == 0
        header, table = read_table(out / "diagnose.csv")
        flags = {row[0]: row[header.index("flag")] for row in table}
        assert flags["odd"] == "potential false negative"
        assert flags["neg0"] == ""
        q_mean = {row[0]: float(row[header.index("questionnaire_mean")]) for row in table}
        assert q_mean["odd"] > 0.5
        assert q_mean["neg0"] < 0.5


class TestBenchmarkCommand:
    def test_one_row_per_cell_method(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "c.yaml",
            {
                "benchmark": {
                    "sensitivities": [0.8],
                    "specificities": [0.8],
                    "n_values": [60],
                    "noise_scales": [0.5],
                    "replicates": 2,
                    "methods": ["stem", "vanilla"],
                    "k_symptoms": 3,
                    "m_factors": 1,
                }
            },
        )
        out = tmp_path / "bm"
        assert cli.main(["benchmark", "--config", config, "--out", str(out)]) == 0
        header, rows = read_table(out / "benchmark.csv")
        assert header[:5] == ["sensitivity", "specificity", "n", "noise_scale", "method"]
        assert [row[4] for row in rows] == ["stem", "vanilla"]
        for row in rows:
            assert int(row[header.index("n_replicates")]) == 2
            assert int(row[header.index("n_failures")]) == 0
            assert 0.0 <= float(row[header.index("mean_accuracy")]) <= 100.0


class TestErrorPaths:
    def test_missing_data_file(self, tmp_path, capsys):
        code = cli.main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("simulate: [unclosed\n")
        code = cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag_exits_nonzero(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["fit", "--data", "d", "--out", "o", "--frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_out_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate"])
        assert exc.value.code == 2

    def test_unknown_benchmark_method(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "c.yaml", {"benchmark": {"methods": ["magic"], "replicates": 1}}
        )
        code = cli.main(["benchmark", "--config", config, "--out", str(tmp_path / "o")])
        assert code == 1
        assert "unknown methods" in capsys.readouterr().err

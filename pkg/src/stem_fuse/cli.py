"""Command-line surface: dataset files, config files, and report emission.

Subcommands: ``simulate`` (synthetic dataset + hidden truth), ``fit``
(chain + summaries), ``diagnose`` (per-subject posterior table, with-test
and questionnaire-only), ``benchmark`` (grid experiments).

Every report file embeds a deterministic run manifest; re-running the same
command on the same inputs reproduces report bytes exactly. Wall-clock
timing goes only to ``run_log.json``, which is exempt from that contract.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__, bench, synth
from .engine import (
    Chain,
    EngineConfig,
    FitSummary,
    parameter_posteriors,
    run_stem,
    subject_posterior_table,
)
from .model import (
    BetaPrior,
    Dataset,
    HyperParams,
    Params,
    SubjectRecord,
    moment_match_beta,
    noninformative_prior,
    validate_dataset,
)

MISSING_TOKENS = ("", "NA")


class IngestError(ValueError):
    """Malformed input file or, under --strict, failed validation."""


# ---------------------------------------------------------------------------
# dataset files


def _parse_header(header: Sequence[str], path: str) -> Tuple[bool, int, int]:
    """Return (has_symptomatic_column, k_symptoms, m_factors)."""
    cols = list(header)
    if not cols or cols[0] != "id" or len(cols) < 2 or cols[1] != "T":
        raise IngestError(f"{path}: header must start with 'id,T', got {cols[:2]}")
    rest = cols[2:]
    has_s = bool(rest) and rest[0] == "S"
    if has_s:
        rest = rest[1:]
    k = 0
    while k < len(rest) and rest[k] == f"X{k + 1}":
        k += 1
    m = 0
    while k + m < len(rest) and rest[k + m] == f"Y{m + 1}":
        m += 1
    if k + m != len(rest) or k == 0:
        raise IngestError(
            f"{path}: header must be id,T[,S],X1..XK,Y1..YM with K >= 1, got {cols}"
        )
    return has_s, k, m


def ingest(path, strict: bool = False) -> Tuple[Dataset, List[str]]:
    """Parse a dataset file; reject invalid records with line-numbered messages.

    A missing test outcome is an empty field or ``NA``. When no explicit
    symptomaticity column exists it derives as 1 iff any symptom is set.
    Malformed rows always raise; records violating model invariants are
    dropped and reported (raised instead under ``strict``).

    Returns:
        (dataset, warnings): the kept records and one message per rejection.
    """
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            rows.append((line_no, next(csv.reader([line]))))
    if not rows:
        raise IngestError(f"{path}: no header row found")

    has_s, k, m = _parse_header(rows[0][1], str(path))
    expected = 2 + int(has_s) + k + m
    records = []
    lines = []
    for line_no, row in rows[1:]:
        if len(row) != expected:
            raise IngestError(f"{path}:{line_no}: expected {expected} fields, got {len(row)}")
        try:
            raw_t = row[1].strip()
            test = None if raw_t in MISSING_TOKENS else int(raw_t)
            offset = 2
            if has_s:
                symptomatic = int(row[offset])
                offset += 1
            symptoms = np.array([int(v) for v in row[offset : offset + k]], dtype=np.int8)
            if not has_s:
                symptomatic = int(symptoms.any())
            risks = np.array([float(v) for v in row[offset + k :]], dtype=np.float64)
        except ValueError as err:
            raise IngestError(f"{path}:{line_no}: malformed row ({err})") from err
        record = SubjectRecord(
            id=row[0], test_result=test, symptomatic=symptomatic, symptoms=symptoms,
            risk_factors=risks,
        )
        records.append(record)
        lines.append(line_no)

    dataset = Dataset(tuple(records), k, m)
    messages = []
    rejected = set()
    first_line = {}
    last_line = {}
    for idx, r in enumerate(records):
        first_line.setdefault(r.id, lines[idx])
        last_line[r.id] = lines[idx]
    for v in validate_dataset(dataset):
        if v.rule == "duplicate id":
            # The later occurrence is the offender; keep the first.
            messages.append(f"{path}:{last_line[v.record_id]}: {v.rule}: {v.message}")
            seen_once = False
            for idx, r in enumerate(records):
                if r.id == v.record_id and seen_once:
                    rejected.add(idx)
                seen_once = seen_once or r.id == v.record_id
            continue
        messages.append(f"{path}:{first_line.get(v.record_id, '?')}: {v.rule}: {v.message}")
        rejected.update(idx for idx, r in enumerate(records) if r.id == v.record_id)
    if messages and strict:
        raise IngestError("validation failed:\n" + "\n".join(messages))
    if rejected:
        kept = tuple(r for idx, r in enumerate(records) if idx not in rejected)
        dataset = Dataset(kept, k, m)
    return dataset, messages


def write_dataset(dataset: Dataset, path, manifest: Optional["RunManifest"] = None) -> None:
    """Write the dataset in the ingestible format (floats round-trip exactly)."""
    k, m = dataset.k_symptoms, dataset.m_factors
    header = ["id", "T", "S"] + [f"X{j + 1}" for j in range(k)] + [f"Y{j + 1}" for j in range(m)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if manifest is not None:
            fh.write(manifest.embed_line() + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in dataset.records:
            row = [r.id, "" if r.test_result is None else str(r.test_result), str(r.symptomatic)]
            row += [str(int(v)) for v in r.symptoms]
            row += [repr(float(v)) for v in r.risk_factors]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# run manifest


@dataclass
class RunManifest:
    """Provenance embedded in every report: what ran, on what, with what seed."""

    version: str
    command: str
    seed: int
    config: dict
    input_digests: Dict[str, str] = field(default_factory=dict)
    timing_seconds: Optional[float] = None

    def deterministic_dict(self) -> dict:
        return {
            "version": self.version,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "input_digests": self.input_digests,
        }

    def embed_line(self) -> str:
        return "# manifest: " + json.dumps(self.deterministic_dict(), sort_keys=True)

    def full_dict(self) -> dict:
        out = self.deterministic_dict()
        out["timing_seconds"] = self.timing_seconds
        return out


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _manifest(command: str, seed: int, config: dict, inputs: Dict[str, str]) -> RunManifest:
    digests = {name: _sha256(p) for name, p in inputs.items() if p}
    return RunManifest(
        version=__version__, command=command, seed=seed, config=config, input_digests=digests
    )


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_run_log(out_dir: Path, manifest: RunManifest, elapsed: float) -> None:
    manifest.timing_seconds = elapsed
    _write_json(out_dir / "run_log.json", manifest.full_dict())


# ---------------------------------------------------------------------------
# config files


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh)
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise IngestError(f"{path}: config must be a mapping")
    return cfg


def _parse_prior(spec, context: str) -> BetaPrior:
    if spec is None or spec == "noninformative":
        return noninformative_prior()
    if isinstance(spec, dict):
        if "alpha" in spec and "beta" in spec:
            return BetaPrior(float(spec["alpha"]), float(spec["beta"]))
        if "mean" in spec and "variance" in spec:
            return moment_match_beta(float(spec["mean"]), float(spec["variance"]))
    raise IngestError(
        f"prior {context!r} must be 'noninformative', {{alpha, beta}}, or {{mean, variance}}"
    )


def _parse_symptom_priors(spec, k: int, context: str) -> tuple:
    if isinstance(spec, list):
        if len(spec) != k:
            raise IngestError(f"prior list {context!r} must have length {k}, got {len(spec)}")
        return tuple(_parse_prior(s, f"{context}[{i}]") for i, s in enumerate(spec))
    return (_parse_prior(spec, context),) * k


def build_hyper(cfg: dict, k_symptoms: int) -> HyperParams:
    """HyperParams from the config's ``priors`` section plus the two scales."""
    priors = cfg.get("priors", {}) or {}
    return HyperParams(
        sensitivity_prior=_parse_prior(priors.get("sensitivity"), "sensitivity"),
        false_positive_prior=_parse_prior(priors.get("false_positive_rate"), "false_positive_rate"),
        symptomatic_if_healthy_prior=_parse_prior(
            priors.get("symptomatic_if_healthy"), "symptomatic_if_healthy"
        ),
        symptomatic_if_infected_prior=_parse_prior(
            priors.get("symptomatic_if_infected"), "symptomatic_if_infected"
        ),
        symptom_priors_healthy=_parse_symptom_priors(
            priors.get("symptoms_healthy"), k_symptoms, "symptoms_healthy"
        ),
        symptom_priors_infected=_parse_symptom_priors(
            priors.get("symptoms_infected"), k_symptoms, "symptoms_infected"
        ),
        weight_scale=float(cfg.get("risk_weight_scale", 10.0)),
        noise_scale=float(cfg.get("noise_scale", 0.5)),
        imputed_sensitivity_prior=_parse_prior(
            priors.get("imputed_sensitivity", {"alpha": 2, "beta": 2}), "imputed_sensitivity"
        ),
        imputed_false_positive_prior=_parse_prior(
            priors.get("imputed_false_positive_rate", {"alpha": 2, "beta": 2}),
            "imputed_false_positive_rate",
        ),
    )


def build_engine_config(cfg: dict, args: argparse.Namespace) -> EngineConfig:
    """EngineConfig from the config's ``engine`` section, flags override."""
    section = dict(cfg.get("engine", {}) or {})
    mapping = dict(
        max_iters=section.get("max_iters", 500),
        burn_in=section.get("burn_in"),
        conv_tol=section.get("conv_tol", 1e-3),
        conv_window=section.get("conv_window", 25),
        seed=section.get("seed", 0),
        intercept=section.get("intercept", True),
        beta_loss=section.get("beta_loss", "squared"),
        missing_t_mode=section.get("missing_t", "impute"),
        imputed_class_enabled=section.get("imputed_class", True),
        n_posterior_draws=section.get("n_posterior_draws", 200),
    )
    if getattr(args, "seed", None) is not None:
        mapping["seed"] = args.seed
    if getattr(args, "missing_t", None) is not None:
        mapping["missing_t_mode"] = args.missing_t
    if getattr(args, "beta_loss", None) is not None:
        mapping["beta_loss"] = args.beta_loss
    if mapping["missing_t_mode"] == "impute":
        mapping["missing_t_mode"] = "joint_imputation"
    return EngineConfig(**mapping)


def _config_snapshot(cfg: dict, engine_config: EngineConfig) -> dict:
    snapshot = dict(cfg)
    snapshot["resolved_engine"] = {
        "max_iters": engine_config.max_iters,
        "burn_in": engine_config.burn_in,
        "conv_tol": engine_config.conv_tol,
        "conv_window": engine_config.conv_window,
        "seed": engine_config.seed,
        "intercept": engine_config.intercept,
        "beta_loss": engine_config.beta_loss,
        "missing_t_mode": engine_config.missing_t_mode,
        "imputed_class_enabled": engine_config.imputed_class_enabled,
        "n_posterior_draws": engine_config.n_posterior_draws,
    }
    return snapshot


# ---------------------------------------------------------------------------
# report helpers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def _write_table(path, header: List[str], rows: List[List], manifest: RunManifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(manifest.embed_line() + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _params_dict(p: Params) -> dict:
    return {
        "sensitivity": p.sensitivity,
        "false_positive_rate": p.false_positive_rate,
        "symptomatic_if_healthy": p.symptomatic_if_healthy,
        "symptomatic_if_infected": p.symptomatic_if_infected,
        "symptom_rates_healthy": [float(v) for v in p.symptom_rates_healthy],
        "symptom_rates_infected": [float(v) for v in p.symptom_rates_infected],
        "risk_weights": [float(v) for v in p.risk_weights],
        "imputed_sensitivity": p.imputed_sensitivity,
        "imputed_false_positive_rate": p.imputed_false_positive_rate,
    }


def _param_column_names(p: Params) -> List[str]:
    names = [
        "sensitivity",
        "false_positive_rate",
        "symptomatic_if_healthy",
        "symptomatic_if_infected",
    ]
    names += [f"symptom_rates_healthy[{j}]" for j in range(p.k_symptoms)]
    names += [f"symptom_rates_infected[{j}]" for j in range(p.k_symptoms)]
    if p.has_imputed_class:
        names += ["imputed_sensitivity", "imputed_false_positive_rate"]
    names += [f"risk_weights[{j}]" for j in range(p.risk_weights.shape[0])]
    return names


def _write_fit_reports(
    out_dir: Path,
    dataset: Dataset,
    hyper: HyperParams,
    config: EngineConfig,
    chain: Chain,
    summary: FitSummary,
    manifest: RunManifest,
) -> None:
    _write_json(
        out_dir / "fit_summary.json",
        {
            "manifest": manifest.deterministic_dict(),
            "n_iters": chain.n_iters,
            "stop_reason": chain.stop_reason,
            "burn_in": chain.burn_in,
            "params_mean": _params_dict(summary.params_mean),
            "final_posteriors": {
                name: {"alpha": float(b.alpha), "beta": float(b.beta)}
                for name, b in summary.final_posteriors.items()
            },
        },
    )

    names = _param_column_names(chain.snapshots[-1])
    rows = []
    for i, p in enumerate(chain.snapshots):
        rows.append([i] + [float(v) for v in p.as_vector()])
    _write_table(out_dir / "chain_parameters.csv", ["iteration"] + names, rows, manifest)

    ids = [r.id for r in dataset.records]
    tests = ["" if r.test_result is None else r.test_result for r in dataset.records]
    rows = [
        [ids[i], tests[i], summary.subject_means[i], summary.subject_intervals[i, 0],
         summary.subject_intervals[i, 1]]
        for i in range(len(dataset))
    ]
    _write_table(
        out_dir / "subject_posteriors.csv",
        ["id", "test_result", "mean", "lower_95", "upper_95"],
        rows,
        manifest,
    )

    posterior_rows = []
    for name, pp in parameter_posteriors(chain, hyper).items():
        samples = pp.samples
        if samples.ndim > 1:
            for j in range(samples.shape[1]):
                posterior_rows.append(
                    [f"{name}[{j}]", samples[:, j].mean(), np.quantile(samples[:, j], 0.025),
                     np.quantile(samples[:, j], 0.975), None, None]
                )
            continue
        conj = pp.conjugate
        posterior_rows.append(
            [name, samples.mean(), np.quantile(samples, 0.025), np.quantile(samples, 0.975),
             None if conj is None else float(conj.alpha),
             None if conj is None else float(conj.beta)]
        )
    _write_table(
        out_dir / "parameter_posteriors.csv",
        ["parameter", "chain_mean", "chain_lower_95", "chain_upper_95",
         "posterior_alpha", "posterior_beta"],
        posterior_rows,
        manifest,
    )


def _diagnosis_flag(test_result, questionnaire_mean: float) -> str:
    if test_result == 0 and questionnaire_mean > 0.5:
        return "potential false negative"
    if test_result == 1 and questionnaire_mean < 0.5:
        return "potential false positive"
    return ""


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config) if args.config else {}
    sim = dict(cfg.get("simulate", {}) or {})
    n = int(sim.get("n", 300))
    k = int(sim.get("k_symptoms", synth.DEFAULT_K_SYMPTOMS))
    m = int(sim.get("m_factors", synth.DEFAULT_M_FACTORS))
    sensitivity = float(sim.get("sensitivity", 0.8))
    specificity = float(sim.get("specificity", 0.8))
    noise_scale = float(sim.get("noise_scale", 0.5))
    seed = args.seed if args.seed is not None else int(cfg.get("engine", {}).get("seed", 0))

    rng = np.random.default_rng(seed)
    true_params = synth.sample_true_params(
        k, m, sensitivity, specificity, rng, noise_scale=noise_scale
    )
    dataset, truth = synth.generate(true_params, n, k, m, rng)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest("simulate", seed, dict(cfg), {"config": args.config})
    write_dataset(dataset, out_dir / "dataset.csv", manifest)
    _write_table(
        out_dir / "truth.csv",
        ["id", "diagnosis"],
        [[r.id, int(d)] for r, d in zip(dataset.records, truth)],
        manifest,
    )
    payload = _params_dict(true_params)
    payload["noise_scale"] = true_params.noise_scale
    _write_json(
        out_dir / "true_params.json",
        {"manifest": manifest.deterministic_dict(), "true_params": payload},
    )
    _write_run_log(out_dir, manifest, time.perf_counter() - started)
    print(f"simulate: wrote {n} subjects (K={k}, M={m}) to {out_dir}")
    return 0


def _load_fit_inputs(args: argparse.Namespace):
    cfg = load_config(args.config) if args.config else {}
    dataset, messages = ingest(args.data, strict=args.strict)
    for message in messages:
        print(f"warning: {message}", file=sys.stderr)
    hyper = build_hyper(cfg, dataset.k_symptoms)
    config = build_engine_config(cfg, args)
    return cfg, dataset, hyper, config


def _cmd_fit(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg, dataset, hyper, config = _load_fit_inputs(args)
    chain, summary = run_stem(dataset, hyper, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(
        "fit", config.seed, _config_snapshot(cfg, config), {"config": args.config, "data": args.data}
    )
    _write_fit_reports(out_dir, dataset, hyper, config, chain, summary, manifest)
    _write_run_log(out_dir, manifest, time.perf_counter() - started)
    print(
        f"fit: {chain.n_iters} iterations ({chain.stop_reason}); "
        f"reports written to {out_dir}"
    )
    return 0


def _cmd_diagnose(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg, dataset, hyper, config = _load_fit_inputs(args)
    chain, _ = run_stem(dataset, hyper, config)
    with_means, with_intervals = subject_posterior_table(chain, dataset, config, include_test=True)
    q_means, q_intervals = subject_posterior_table(chain, dataset, config, include_test=False)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(
        "diagnose",
        config.seed,
        _config_snapshot(cfg, config),
        {"config": args.config, "data": args.data},
    )
    rows = []
    for i, r in enumerate(dataset.records):
        rows.append(
            [
                r.id,
                "" if r.test_result is None else r.test_result,
                with_means[i],
                with_intervals[i, 0],
                with_intervals[i, 1],
                q_means[i],
                q_intervals[i, 0],
                q_intervals[i, 1],
                _diagnosis_flag(r.test_result, q_means[i]),
            ]
        )
    _write_table(
        out_dir / "diagnose.csv",
        [
            "id",
            "test_result",
            "with_test_mean",
            "with_test_lower_95",
            "with_test_upper_95",
            "questionnaire_mean",
            "questionnaire_lower_95",
            "questionnaire_upper_95",
            "flag",
        ],
        rows,
        manifest,
    )
    _write_run_log(out_dir, manifest, time.perf_counter() - started)
    print(f"diagnose: wrote per-subject posteriors for {len(dataset)} subjects to {out_dir}")
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config) if args.config else {}
    bm = dict(cfg.get("benchmark", {}) or {})
    seed = args.seed if args.seed is not None else int(cfg.get("engine", {}).get("seed", 0))
    methods = tuple(bm.get("methods", list(bench.KNOWN_METHODS)))
    cells = synth.grid_spec(
        sens_list=tuple(bm.get("sensitivities", synth.DEFAULT_ACCURACY_AXIS)),
        spec_list=tuple(bm.get("specificities", synth.DEFAULT_ACCURACY_AXIS)),
        n_list=tuple(bm.get("n_values", synth.DEFAULT_N)),
        sigma_list=tuple(bm.get("noise_scales", synth.DEFAULT_NOISE_SCALES)),
        replicates=int(bm.get("replicates", 100)),
        master_seed=seed,
        k_symptoms=int(bm.get("k_symptoms", synth.DEFAULT_K_SYMPTOMS)),
        m_factors=int(bm.get("m_factors", synth.DEFAULT_M_FACTORS)),
    )
    engine_config = build_engine_config(cfg, args)
    results = bench.run_grid(cells, methods=methods, engine_config=engine_config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(
        "benchmark", seed, _config_snapshot(cfg, engine_config), {"config": args.config}
    )
    rows = [
        [
            r.sensitivity,
            r.specificity,
            r.n,
            r.noise_scale,
            r.method,
            r.mean_accuracy,
            r.std_accuracy,
            r.mean_gain,
            r.std_gain,
            r.mean_fit_seconds,
            r.mean_iterations,
            r.mean_iter_seconds,
            r.n_replicates,
            r.n_failures,
        ]
        for r in results
    ]
    _write_table(
        out_dir / "benchmark.csv",
        [
            "sensitivity",
            "specificity",
            "n",
            "noise_scale",
            "method",
            "mean_accuracy",
            "std_accuracy",
            "mean_gain",
            "std_gain",
            "mean_fit_seconds",
            "mean_iterations",
            "mean_iter_seconds",
            "n_replicates",
            "n_failures",
        ],
        rows,
        manifest,
    )
    _write_run_log(out_dir, manifest, time.perf_counter() - started)
    print(f"benchmark: wrote {len(rows)} rows to {out_dir}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stem-fuse",
        description="Fuse a noisy test, symptoms, and risk factors into diagnosis posteriors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, with_data: bool) -> None:
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        if with_data:
            p.add_argument("--data", required=True, help="dataset CSV")
            p.add_argument(
                "--strict", action="store_true", help="turn validation warnings into errors"
            )
            p.add_argument(
                "--missing-t",
                choices=("truncated", "impute"),
                default=None,
                dest="missing_t",
                help="how to treat missing test outcomes",
            )
            p.add_argument(
                "--beta-loss",
                choices=("squared", "bernoulli"),
                default=None,
                dest="beta_loss",
                help="loss for the risk-weight fit",
            )

    add_common(sub.add_parser("simulate", help="generate a synthetic dataset"), with_data=False)
    add_common(sub.add_parser("fit", help="run the stochastic EM fit"), with_data=True)
    add_common(sub.add_parser("diagnose", help="per-subject posterior report"), with_data=True)
    add_common(sub.add_parser("benchmark", help="grid experiments"), with_data=False)
    return parser


_HANDLERS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "diagnose": _cmd_diagnose,
    "benchmark": _cmd_benchmark,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (IngestError, ValueError, OSError, yaml.YAMLError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

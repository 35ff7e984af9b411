"""
Pipeline commands: collect, train-eval, stabilize, report and demo.

Every command reads and writes a single run directory (config.output_dir):

    config.json, manifest.json, trajectories.csv
    datasets/<method>.csv (+ .json sidecar)
    models/<method>.json, metrics/<method>.json, predictions/<method>.csv
    metrics/spectrum_by_s.csv, comparison.json, sweep.json
    control/<method>.csv, control/summary.json
    report/{estimation_scatter,rmse_bars,score_bars,control_traces}.csv, report/summary.txt
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
from jinja2 import Environment, FileSystemLoader

from slipbench.contact import non_slipping_f_n
from slipbench.control import (
    ModelEstimator,
    OracleEstimator,
    run_stabilization,
    summarize,
)
from slipbench.features import (
    read_dataset,
    simulate_trial,
    spectrum_by_stick_ratio,
    trial_samples,
    write_dataset,
)
from slipbench.models import (
    ArtifactError,
    ConfigError,
    Dataset,
    DegenerateError,
    ExperimentConfig,
    FnScheduleEnum,
    LabeledSample,
    MethodEnum,
    RunManifest,
    SvrParams,
    TrialOutcome,
)
from slipbench.slipmodel import (
    evaluate,
    grid_search,
    model_from_dict,
    model_to_dict,
    per_trial_rmse,
    predict,
    split_trials,
    subsample,
    train_svr,
    welch_t_test,
)
from slipbench.utils import (
    TEMPLATES_DIR,
    config_hash,
    get_poetry_version,
    read_csv,
    read_json,
    sha256_file,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

NO_ACTION = "no_action"
REPORT_SERIES = [
    "estimation_scatter.csv",
    "rmse_bars.csv",
    "score_bars.csv",
    "control_traces.csv",
]
SPECTRAL_METHODS = (MethodEnum.INJECTION, MethodEnum.VIBROTACTILE)


def _map(fn: Callable, items: list, jobs: int) -> list:
    """Ordered map, over a process pool when jobs > 1"""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(fn, items))
    return [fn(item) for item in items]


def _relative(out_dir: Path, paths: Iterable[Path]) -> list[str]:
    return [p.relative_to(out_dir).as_posix() for p in paths]


def update_manifest(config: ExperimentConfig, paths: Iterable[Path]) -> RunManifest:
    """
    Records checksums of freshly written artifacts in the run manifest
    """
    out_dir = Path(config.output_dir)
    manifest_path = out_dir / "manifest.json"
    now = datetime.now(timezone.utc).isoformat(timespec="seconds")
    if manifest_path.exists():
        manifest = RunManifest.model_validate(read_json(manifest_path))
        if manifest.config_hash != config_hash(config):
            logger.warning("Run directory was produced with a different configuration")
        manifest.config_hash = config_hash(config)
        manifest.updated_at = now
    else:
        manifest = RunManifest(
            config_hash=config_hash(config),
            tool_version=get_poetry_version(),
            created_at=now,
            updated_at=now,
        )
    manifest.config = config.model_dump(mode="json", exclude={"output_dir"})
    for path in paths:
        manifest.files[path.relative_to(out_dir).as_posix()] = sha256_file(path)
    write_json(manifest_path, manifest.model_dump(mode="json"))
    return manifest


def check_artifacts(out_dir: Path, required: list[str]) -> None:
    """
    Raises ArtifactError listing every missing file, or every file whose checksum
    no longer matches the manifest
    """
    missing = [name for name in required if not (out_dir / name).is_file()]
    if missing:
        raise ArtifactError(f"Missing {len(missing)} artifact(s) in {out_dir}", missing)
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        return
    files = read_json(manifest_path).get("files", {})
    stale = [
        name for name in required if name in files and files[name] != sha256_file(out_dir / name)
    ]
    if stale:
        raise ArtifactError(f"{len(stale)} artifact(s) changed since they were recorded", stale)


def _collect_trial(args: tuple[ExperimentConfig, int, str]) -> dict:
    config, trial_id, material = args
    record = simulate_trial(config, trial_id, material)
    samples = {}
    if record.f_t_slip is not None:
        for method in config.methods:
            samples[method] = trial_samples(record, method, config.window, config)
    trajectory = [
        [trial_id, material, s.step, s.t, s.f_n, s.f_t, s.stick_ratio_true, s.y]
        for s in record.states
    ]
    return {
        "trial_id": trial_id,
        "material": material,
        "f_n": record.f_n,
        "slip_step": record.slip_step,
        "samples": samples,
        "trajectory": trajectory,
    }


def trial_plan(config: ExperimentConfig) -> list[tuple[int, str]]:
    plan = []
    for material in config.materials:
        for _ in range(config.trials_per_material):
            plan.append((len(plan), material))
    return plan


def collect_samples(config: ExperimentConfig, jobs: int = 1) -> list[dict]:
    results = _map(
        _collect_trial, [(config, trial_id, m) for trial_id, m in trial_plan(config)], jobs
    )
    for result in results:
        if result["slip_step"] is None:
            logger.warning(
                f"Trial {result['trial_id']} ({result['material']}, f_n={result['f_n']} kPa) "
                "never reached gross slip, skipped"
            )
    return results


def warn_non_slipping(config: ExperimentConfig) -> dict[str, list[float]]:
    """
    Logs the grid normal forces the actuator stroke cannot break loose
    :return: stuck normal forces per material, materials without any are left out
    """
    stuck = {}
    if config.rig.fn_schedule != FnScheduleEnum.PER_TRIAL:
        return stuck
    for name in config.materials:
        values = non_slipping_f_n(config.rig, config.material(name))
        if values:
            logger.warning(
                f"{name}: the actuator stroke cannot slip the object at {values} kPa, "
                "trials drawing these normal forces will be skipped"
            )
            stuck[name] = values
    return stuck


def cmd_collect(config: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """
    Simulates every trial and writes one dataset per method
    :param config: experiment configuration
    :param jobs: worker processes
    :return: written files
    """
    out_dir = Path(config.output_dir)
    logger.info(
        f"Collecting {config.trials_per_material} trial(s) x {len(config.materials)} material(s) "
        f"into {out_dir}"
    )
    warn_non_slipping(config)
    results = collect_samples(config, jobs)
    digest = config_hash(config)
    written = [out_dir / "config.json"]
    write_json(written[0], config.model_dump(mode="json", exclude={"output_dir"}))

    trajectories = out_dir / "trajectories.csv"
    write_csv(
        trajectories,
        ["trial_id", "material", "step", "t", "f_n", "f_t", "stick_ratio_true", "y"],
        (row for result in results for row in result["trajectory"]),
    )
    written.append(trajectories)

    for method in config.methods:
        samples: list[LabeledSample] = [
            s for result in results for s in result["samples"].get(method, [])
        ]
        path = out_dir / "datasets" / f"{method}.csv"
        write_dataset(
            path,
            samples,
            {
                "method": str(method),
                "window": config.window.model_dump(mode="json"),
                "seed": config.seed,
                "config_hash": digest,
                "trials": sorted({s.trial_id for s in samples}),
            },
        )
        written.extend([path, path.with_suffix(".json")])
        logger.info(f"{method}: {len(samples)} samples")
    update_manifest(config, written)
    return written


def _load_dataset(out_dir: Path, method: MethodEnum) -> Dataset:
    path = out_dir / "datasets" / f"{method}.csv"
    if not path.is_file():
        raise ArtifactError(
            f"No dataset for method {method}, run collect first", [_relative(out_dir, [path])[0]]
        )
    check_artifacts(out_dir, _relative(out_dir, [path]))
    return read_dataset(path)


def fit_method(
    config: ExperimentConfig,
    dataset: Dataset,
    jobs: int = 1,
    params: Optional[SvrParams] = None,
) -> dict:
    """
    Split, subsample, select parameters, train and evaluate one method
    """
    train_idx, test_idx = split_trials(dataset, config.test_fraction, config.seed)
    if len(test_idx) == 0:
        raise ConfigError("No test trials, at least 2 slipping trials per material are required")
    train_idx = subsample(train_idx, config.max_train_samples, config.seed)
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    cv_table = []
    if params is None:
        params, cv_table = grid_search(
            train.X, train.y, config.grid, config.folds, config.seed, train.trial_ids, jobs
        )
    model = train_svr(train.X, train.y, params, config_hash=config_hash(config))
    report = evaluate(model, test)
    predictions = predict(model, test.X)
    return {
        "model": model,
        "report": report,
        "cv_table": cv_table,
        "test": test,
        "predictions": predictions,
        "errors": predictions - test.y,
        "n_train": len(train),
    }


def cmd_train_eval(config: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """
    Trains and evaluates a slip model per method and compares them to the injection method
    """
    out_dir = Path(config.output_dir)
    written = []
    fits = {}
    spectrum_rows = []
    for method in config.methods:
        dataset = _load_dataset(out_dir, method)
        logger.info(f"Training {method} on {len(dataset)} samples")
        fit = fit_method(config, dataset, jobs)
        fits[method] = fit
        if method in SPECTRAL_METHODS:
            spectrum_rows.extend(
                [str(method), *row] for row in spectrum_by_stick_ratio(dataset, config.window)
            )

        model_path = out_dir / "models" / f"{method}.json"
        write_json(model_path, model_to_dict(fit["model"]))
        test = fit["test"]
        predictions_path = out_dir / "predictions" / f"{method}.csv"
        write_csv(
            predictions_path,
            ["trial_id", "material", "step", "label_s", "prediction", "abs_error"],
            (
                [t, m, s, y, p, abs(e)]
                for t, m, s, y, p, e in zip(
                    test.trial_ids, test.materials, test.steps, test.y,
                    fit["predictions"], fit["errors"],
                )
            ),
        )
        written.extend([model_path, predictions_path])
        logger.info(
            f"{method}: rmse {fit['report'].rmse:.4f}, worst10 {fit['report'].worst10_rmse:.4f}"
        )

    comparison = {}
    if MethodEnum.INJECTION in fits:
        reference = np.abs(fits[MethodEnum.INJECTION]["errors"])
        for method, fit in fits.items():
            if method == MethodEnum.INJECTION:
                continue
            try:
                t_stat, p_value = welch_t_test(reference, np.abs(fit["errors"]))
            except DegenerateError as e:
                logger.warning(f"No t-test against {method}: {e}")
                comparison[str(method)] = {"t_stat": None, "p_value": None, "reason": str(e)}
                continue
            fit["report"].t_stat, fit["report"].p_value = t_stat, p_value
            comparison[str(method)] = {
                "t_stat": t_stat,
                "p_value": p_value,
                "test_kind": fit["report"].test_kind,
                "reference": str(MethodEnum.INJECTION),
            }

    for method, fit in fits.items():
        metrics_path = out_dir / "metrics" / f"{method}.json"
        write_json(
            metrics_path,
            {
                **fit["report"].model_dump(mode="json"),
                "params": fit["model"].params.model_dump(mode="json"),
                "cv_table": fit["cv_table"],
                "n_train": fit["n_train"],
                "per_trial_rmse": per_trial_rmse(fit["errors"], fit["test"].trial_ids),
            },
        )
        written.append(metrics_path)

    comparison_path = out_dir / "comparison.json"
    write_json(comparison_path, comparison)
    written.append(comparison_path)
    if spectrum_rows:
        spectrum_path = out_dir / "metrics" / "spectrum_by_s.csv"
        write_csv(spectrum_path, ["method", "s_lo", "s_hi", "band_hz", "magnitude"], spectrum_rows)
        written.append(spectrum_path)

    if config.intensity_sweep_db and MethodEnum.INJECTION in fits:
        sweep_path = out_dir / "sweep.json"
        write_json(
            sweep_path,
            intensity_sweep(config, fits[MethodEnum.INJECTION]["model"].params, jobs),
        )
        written.append(sweep_path)
    update_manifest(config, written)
    return written


def intensity_sweep(config: ExperimentConfig, params: SvrParams, jobs: int = 1) -> list[dict]:
    """
    Injection method accuracy per injected intensity, with the selected parameters
    """
    rows = []
    for intensity in config.intensity_sweep_db:
        swept = config.model_copy(
            update={
                "methods": [MethodEnum.INJECTION],
                "injection": config.injection.model_copy(update={"intensity_db": intensity}),
            }
        )
        samples = [
            s
            for result in collect_samples(swept, jobs)
            for s in result["samples"].get(MethodEnum.INJECTION, [])
        ]
        fit = fit_method(swept, Dataset.from_samples(samples, str(MethodEnum.INJECTION)), params=params)
        rows.append(
            {
                "intensity_db": intensity,
                "rmse": fit["report"].rmse,
                "worst10_rmse": fit["report"].worst10_rmse,
            }
        )
        logger.info(f"Injection at {intensity} dB: rmse {fit['report'].rmse:.4f}")
    return rows


def _stabilize_trial(args: tuple) -> dict:
    config, label, estimator, controller, trial = args
    material = config.materials[trial % len(config.materials)]
    outcome = run_stabilization(config, material, estimator, controller, trial, label)
    return outcome.model_dump(mode="json")


def cmd_stabilize(config: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """
    Runs the stabilization trials of every method and of the no-action baseline
    """
    out_dir = Path(config.output_dir)
    required = [f"models/{m}.json" for m in config.methods]
    check_artifacts(out_dir, required)

    batches = {
        NO_ACTION: (OracleEstimator(), config.controller.model_copy(update={"k": 0.0})),
    }
    for method in config.methods:
        model = model_from_dict(read_json(out_dir / "models" / f"{method}.json"))
        batches[str(method)] = (ModelEstimator(model, method, config), config.controller)

    written = []
    summary = {}
    trial_scores = {}
    for label, (estimator, controller) in batches.items():
        logger.info(f"Stabilizing {config.stabilization_trials} trial(s) with {label}")
        outcomes = _map(
            _stabilize_trial,
            [(config, label, estimator, controller, i) for i in range(config.stabilization_trials)],
            jobs,
        )
        path = out_dir / "control" / f"{label}.csv"
        write_csv(
            path,
            ["trial", "material", "step", "s_est", "s_true", "f_n", "y"],
            (
                [i, o["material"], step + 1, s, st, f, y]
                for i, o in enumerate(outcomes)
                for step, (s, st, f, y) in enumerate(
                    zip(o["s_trace"], o["s_true_trace"], o["f_n_trace"], o["y_trace"])
                )
            ),
        )
        written.append(path)
        batch = [TrialOutcome.model_validate(o) for o in outcomes]
        summary[label] = summarize(batch, config.weights)
        summary[label]["successes"] = [o.success for o in batch]
        summary[label]["final_y"] = [o.final_y for o in batch]
        trial_scores[label] = summary[label]["trial_scores"]
        logger.info(
            f"{label}: success {summary[label]['success_rate']:.2f}, score {summary[label]['score']:.3f}"
        )

    reference = str(MethodEnum.INJECTION)
    if reference in trial_scores:
        for label, scores in trial_scores.items():
            if label == reference:
                continue
            try:
                t_stat, p_value = welch_t_test(trial_scores[reference], scores)
                summary[label]["t_test"] = {"t_stat": t_stat, "p_value": p_value, "reference": reference}
            except DegenerateError as e:
                summary[label]["t_test"] = {"t_stat": None, "p_value": None, "reason": str(e)}

    summary_path = out_dir / "control" / "summary.json"
    write_json(summary_path, {"weights": config.weights.model_dump(), "batches": summary})
    written.append(summary_path)
    update_manifest(config, written)
    return written


def expected_artifacts(methods: list[str]) -> list[str]:
    names = ["config.json", "control/summary.json", f"control/{NO_ACTION}.csv"]
    for method in methods:
        names.extend(
            [f"metrics/{method}.json", f"predictions/{method}.csv", f"control/{method}.csv"]
        )
    return names


def cmd_report(out_dir: Path) -> list[Path]:
    """
    Writes plot-ready series and a text summary of a completed run
    :param out_dir: run directory
    :return: written files
    """
    out_dir = Path(out_dir)
    config_path = out_dir / "config.json"
    methods = (
        read_json(config_path)["methods"] if config_path.is_file() else [str(m) for m in MethodEnum]
    )
    check_artifacts(out_dir, expected_artifacts(methods))

    report_dir = out_dir / "report"
    metrics = {m: read_json(out_dir / "metrics" / f"{m}.json") for m in methods}
    control = read_json(out_dir / "control" / "summary.json")

    scatter = []
    for method in methods:
        _, rows = read_csv(out_dir / "predictions" / f"{method}.csv")
        for trial_id, material, step, label, prediction, _ in sorted(
            rows, key=lambda r: (float(r[3]), int(r[0]), int(r[2]))
        ):
            scatter.append([method, trial_id, material, step, label, prediction])
    write_csv(
        report_dir / "estimation_scatter.csv",
        ["method", "trial_id", "material", "step", "label_s", "prediction"],
        scatter,
    )

    def _maybe(value):
        return "" if value is None else value

    bars = []
    for m in methods:
        bars.append(
            [
                m,
                "all",
                metrics[m]["rmse"],
                metrics[m]["worst10_rmse"],
                _maybe(metrics[m]["t_stat"]),
                _maybe(metrics[m]["p_value"]),
            ]
        )
        for material, value in sorted(metrics[m]["per_material_rmse"].items()):
            bars.append([m, material, value, "", "", ""])
    write_csv(
        report_dir / "rmse_bars.csv",
        ["method", "material", "rmse", "worst10_rmse", "t_stat", "p_value"],
        bars,
    )

    batches = control["batches"]
    labels = [NO_ACTION] + list(methods)
    write_csv(
        report_dir / "score_bars.csv",
        ["method", "success_rate", "mean_y", "mean_f_n", "mean_steps", "score", "t_stat", "p_value"],
        [
            [
                label,
                batches[label]["success_rate"],
                batches[label]["mean_y"],
                batches[label]["mean_f_n"],
                batches[label]["mean_steps"],
                batches[label]["score"],
                _maybe(batches[label].get("t_test", {}).get("t_stat")),
                _maybe(batches[label].get("t_test", {}).get("p_value")),
            ]
            for label in labels
        ],
    )

    traces = []
    for label in labels:
        _, rows = read_csv(out_dir / "control" / f"{label}.csv")
        traces.extend([label, *row] for row in rows)
    write_csv(
        report_dir / "control_traces.csv",
        ["method", "trial", "material", "step", "s_est", "s_true", "f_n", "y"],
        traces,
    )

    environment = Environment(
        loader=FileSystemLoader(TEMPLATES_DIR), keep_trailing_newline=True, autoescape=False
    )
    text = environment.get_template("summary.txt.j2").render(
        run=out_dir.name,
        methods=methods,
        metrics=metrics,
        labels=labels,
        batches=batches,
        weights=control["weights"],
    )
    summary_path = report_dir / "summary.txt"
    summary_path.write_text(text, encoding="utf-8")

    written = [report_dir / name for name in REPORT_SERIES] + [summary_path]
    logger.info(f"Report written to {report_dir}")
    return written


def cmd_demo(config: ExperimentConfig, jobs: int = 1) -> list[Path]:
    """
    Runs the whole pipeline in one go
    """
    written = cmd_collect(config, jobs)
    written += cmd_train_eval(config, jobs)
    written += cmd_stabilize(config, jobs)
    written += cmd_report(Path(config.output_dir))
    return written


import re
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from slipbench.harness import REPORT_SERIES, check_artifacts, expected_artifacts
from slipbench.models import ArtifactError, RunStatusModel, StatusModel, VersionModel
from slipbench.utils import get_poetry_version, get_runs_dir, init_sentry, read_json, setup_logging

logger = setup_logging()

init_sentry()

app = FastAPI(
    title="slipbench API",
    summary="Browse the results of incipient slip estimation and stabilization runs",
    version=get_poetry_version(),
)

RUN_NAME = re.compile(r"^[A-Za-z0-9_.-]+$")


def list_runs() -> list[str]:
    runs_dir = get_runs_dir()
    if not runs_dir.is_dir():
        return []
    return sorted(p.name for p in runs_dir.iterdir() if (p / "config.json").is_file())


def run_dir(run: str) -> Path:
    if not RUN_NAME.match(run) or run not in list_runs():
        raise HTTPException(status_code=404, detail=f"Run '{run}' not found")
    return get_runs_dir() / run


def run_status(run: str) -> RunStatusModel:
    path = get_runs_dir() / run
    methods = read_json(path / "config.json").get("methods", [])
    required = expected_artifacts(methods) + [f"report/{name}" for name in REPORT_SERIES]
    try:
        check_artifacts(path, required)
    except ArtifactError as e:
        return RunStatusModel(name=run, complete=False, missing=e.missing)
    return RunStatusModel(name=run, complete=True)


@app.get("/version", response_model=VersionModel)
async def get_version() -> VersionModel:
    return VersionModel(version=get_poetry_version())


@app.get("/status", response_model=StatusModel)
async def get_status() -> StatusModel:
    healthy = get_runs_dir().is_dir()
    return StatusModel(
        status="ok" if healthy else "no runs directory",
        healthy=healthy,
        runs=[run_status(run) for run in list_runs()],
    )


@app.get("/runs", response_model=list[str])
async def get_runs() -> list[str]:
    return list_runs()


@app.get("/runs/{run}/summary")
async def get_run_summary(run: str) -> dict:
    path = run_dir(run)
    config = read_json(path / "config.json")
    metrics = {}
    for method in config.get("methods", []):
        metrics_path = path / "metrics" / f"{method}.json"
        if metrics_path.is_file():
            metrics[method] = {
                k: v for k, v in read_json(metrics_path).items() if k not in ("cv_table", "per_trial_rmse")
            }
    control_path = path / "control" / "summary.json"
    return {
        "run": run,
        "config": config,
        "metrics": metrics,
        "control": read_json(control_path) if control_path.is_file() else None,
    }


@app.get("/runs/{run}/series/{name}", response_class=PlainTextResponse)
async def get_run_series(run: str, name: str) -> str:
    path = run_dir(run)
    filename = name if name.endswith(".csv") else f"{name}.csv"
    if filename not in REPORT_SERIES:
        raise HTTPException(status_code=404, detail=f"Series '{name}' not registered")
    series = path / "report" / filename
    if not series.is_file():
        raise HTTPException(status_code=404, detail=f"Series '{name}' not reported yet for '{run}'")
    return series.read_text(encoding="utf-8")

import os
from collections.abc import Generator
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from slipbench.harness import cmd_demo
from slipbench.models import (
    ControllerConfig,
    ExperimentConfig,
    KernelEnum,
    MethodEnum,
    RigConfig,
    SvrParams,
)
from slipbench.utils import load_config
from tests import SMALL_F_N_HI, SMALL_F_N_LO, TEST_MATERIALS, TEST_METHODS


def get_test_materials() -> list[str]:
    return TEST_MATERIALS


def get_test_methods() -> list[str]:
    return TEST_METHODS


def make_small_config(output_dir: Path, seed: int = 3) -> ExperimentConfig:
    """
    One material, three slipping trials, two methods and a two point grid
    """
    return ExperimentConfig(
        seed=seed,
        materials=["pla"],
        trials_per_material=3,
        methods=[MethodEnum.INJECTION, MethodEnum.E19],
        rig=RigConfig(f_n_grid_lo=SMALL_F_N_LO, f_n_grid_hi=SMALL_F_N_HI),
        grid=[
            SvrParams(kernel=KernelEnum.RBF, c=1.0, epsilon=0.01, gamma=1.0),
            SvrParams(kernel=KernelEnum.LINEAR, c=1.0, epsilon=0.01, gamma=None),
        ],
        folds=2,
        max_train_samples=150,
        stabilization_trials=2,
        controller=ControllerConfig(max_steps=40),
        output_dir=output_dir,
    )


@pytest.fixture
def small_config(tmp_path: Path) -> ExperimentConfig:
    return make_small_config(tmp_path / "small")


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory: pytest.TempPathFactory) -> ExperimentConfig:
    """
    Complete demo pipeline, run once per session
    """
    runs_dir = tmp_path_factory.mktemp("runs")
    config = load_config("demo", {"output_dir": runs_dir / "demo"})
    cmd_demo(config, jobs=1)
    return config


@pytest.fixture
def client(demo_run: ExperimentConfig) -> Generator[TestClient, None, None]:
    os.environ["SLIPBENCH_RUNS_DIR"] = str(Path(demo_run.output_dir).parent)
    from slipbench.app import app

    yield TestClient(app)
    del os.environ["SLIPBENCH_RUNS_DIR"]

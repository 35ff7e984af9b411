"""
Closed-loop stick ratio stabilization and its achievement score
"""

import logging
from typing import Optional, Protocol, Sequence

import numpy as np

from slipbench.contact import initial_state, step_rig
from slipbench.features import feature_dim, frames_feature
from slipbench.models import (
    ConfigError,
    ContactState,
    ControllerConfig,
    ExperimentConfig,
    MethodEnum,
    ScoreWeights,
    SensorFrame,
    SvrModel,
    TrialOutcome,
)
from slipbench.slipmodel import predict
from slipbench.utils import Stream, derive_rng
from slipbench.vibromedium import synthesize_frame

logger = logging.getLogger(__name__)

# stabilization trials draw their streams far from the collection trial ids
CONTROL_TRIAL_OFFSET = 1_000_000


class Estimator(Protocol):
    injected: bool

    def estimate(self, state: ContactState, frames: list[SensorFrame], end: int) -> float: ...


class OracleEstimator:
    """
    Perfect estimator reading the simulator's true stick ratio
    """

    injected = False

    def estimate(self, state: ContactState, frames: list[SensorFrame], end: int) -> float:
        return state.stick_ratio_true


class ModelEstimator:
    """
    Estimates the stick ratio from sensor frames with a trained slip model
    """

    def __init__(self, model: SvrModel, method: MethodEnum, config: ExperimentConfig):
        expected = feature_dim(method, config.window)
        if model.n_features_in != expected:
            raise ConfigError(
                f"Model for {method} expects {model.n_features_in} features, "
                f"the {method} feature has {expected}"
            )
        self.model = model
        self.method = method
        self.config = config
        self.injected = method.uses_injection

    def estimate(self, state: ContactState, frames: list[SensorFrame], end: int) -> float:
        feature = frames_feature(
            frames,
            end,
            self.method,
            self.config.window,
            self.config.rig,
            self.config.injection.sample_rate,
        )
        return float(predict(self.model, feature))


def control_action(s_est: float, cfg: ControllerConfig) -> float:
    """
    Proportional action on the stick ratio error
    :param s_est: estimated stick ratio
    :param cfg: controller configuration
    :return: action a [kPa], subtracted from the normal force
    """
    return cfg.k * (s_est - cfg.s_d)


def apply_action(f_n: float, action: float, cfg: ControllerConfig) -> tuple[float, bool]:
    """
    Applies an action to the normal force
    :return: (clamped normal force, whether the request went over the safety limit)
    """
    requested = f_n - action
    return float(np.clip(requested, cfg.f_n_min, cfg.f_n_safety)), requested > cfg.f_n_safety


def run_stabilization(
    config: ExperimentConfig,
    material_name: str,
    estimator: Estimator,
    controller: Optional[ControllerConfig] = None,
    trial: int = 0,
    method: Optional[str] = None,
) -> TrialOutcome:
    """
    Runs one stabilization trial under the data collection loading schedule
    :param config: experiment configuration
    :param material_name: object material
    :param estimator: stick ratio estimator
    :param controller: controller configuration, defaults to config.controller
    :param trial: trial index, trials with the same index share their random draws
    :param method: label recorded in the outcome
    :return: trial outcome
    """
    cfg = controller or config.controller
    material = config.material(material_name)
    trial_id = CONTROL_TRIAL_OFFSET + trial
    rng = derive_rng(config.seed, trial_id, Stream.CONTROL)

    f_n = cfg.f_n_init
    state = initial_state(f_n)
    frames = []
    previous = None
    traces = {"s": [], "s_true": [], "f_n": [], "y": []}
    success = True
    steps = 0
    for steps in range(1, cfg.max_steps + 1):
        previous, state = state, step_rig(state, config.rig, material, f_n=f_n, rng=rng)
        if not frames:
            frames.append(
                synthesize_frame(
                    previous, None, config.rig, material, config.injection, config.profile,
                    config.electrodes, config.seed, trial_id, estimator.injected,
                )
            )
        frames.append(
            synthesize_frame(
                state, previous, config.rig, material, config.injection, config.profile,
                config.electrodes, config.seed, trial_id, estimator.injected,
            )
        )
        s_est = estimator.estimate(state, frames, steps)
        f_n, over_limit = apply_action(f_n, control_action(s_est, cfg), cfg)

        traces["s"].append(s_est)
        traces["s_true"].append(state.stick_ratio_true)
        traces["f_n"].append(f_n)
        traces["y"].append(state.y)
        if state.y > cfg.y_fail or over_limit:
            success = False
            break

    return TrialOutcome(
        success=success,
        final_y=state.y,
        final_f_n=f_n,
        steps=steps,
        s_trace=traces["s"],
        s_true_trace=traces["s_true"],
        f_n_trace=traces["f_n"],
        y_trace=traces["y"],
        seed=config.seed,
        material=material_name,
        method=method,
    )


def score_from_summary(
    success_rate: float, mean_y: float, mean_f_n: float, weights: ScoreWeights
) -> float:
    """
    Achievement score rewarding success, short object travel and low grip
    """
    return (weights.w1 + success_rate) * (
        weights.w2 / max(mean_y, weights.eps_den) + weights.w3 / max(mean_f_n, weights.eps_den)
    )


def score(outcomes: Sequence[TrialOutcome], weights: ScoreWeights) -> tuple[float, list[float]]:
    """
    Batch score and per-trial scores of a stabilization batch
    :param outcomes: trial outcomes
    :param weights: score weights
    :return: (batch score, per-trial scores)
    """
    if not outcomes:
        raise ValueError("Cannot score an empty batch")
    success_rate = float(np.mean([o.success for o in outcomes]))
    batch = score_from_summary(
        success_rate,
        float(np.mean([o.final_y for o in outcomes])),
        float(np.mean([o.final_f_n for o in outcomes])),
        weights,
    )
    per_trial = [
        score_from_summary(float(o.success), o.final_y, o.final_f_n, weights) for o in outcomes
    ]
    return batch, per_trial


def summarize(outcomes: Sequence[TrialOutcome], weights: ScoreWeights) -> dict:
    batch, per_trial = score(outcomes, weights)
    return {
        "success_rate": float(np.mean([o.success for o in outcomes])),
        "mean_y": float(np.mean([o.final_y for o in outcomes])),
        "mean_f_n": float(np.mean([o.final_f_n for o in outcomes])),
        "mean_steps": float(np.mean([o.steps for o in outcomes])),
        "score": batch,
        "trial_scores": per_trial,
        "materials": [o.material for o in outcomes],
        "n_trials": len(outcomes),
    }

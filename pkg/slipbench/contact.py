"""
Quasi-static rig: actuator, spring, sensor-object contact and stick-slip.

Forces are in newtons, normal force is kept as contact pressure in kPa and
converted with RigConfig.kpa_to_newton, displacements are in mm.
"""

import logging
import math
from typing import Optional, Union

import numpy as np

from slipbench.models import (
    ContactError,
    ContactState,
    ConfigError,
    FnScheduleEnum,
    MaterialSpec,
    RigConfig,
)

logger = logging.getLogger(__name__)


def stick_ratio_partial_slip(f_t: float, f_n: float, mu: float) -> float:
    """
    Stick ratio of a Hertzian contact under partial slip
    :param f_t: tangential force [N]
    :param f_n: normal force [N]
    :param mu: friction coefficient
    :return: stick area over contact area, in [0, 1]
    """
    if f_n <= 0:
        raise ContactError(f"Normal force must be positive, got {f_n}")
    if mu <= 0:
        raise ContactError(f"Friction coefficient must be positive, got {mu}")
    ratio = abs(f_t) / (mu * f_n)
    if ratio >= 1:
        return 0.0
    return float((1.0 - ratio) ** (2.0 / 3.0))


def effective_stiffness(rig: RigConfig, material: MaterialSpec) -> float:
    k_s, k_sh = rig.spring_constant, material.shear_stiffness
    return k_s * k_sh / (k_s + k_sh)


def max_tangential_force(rig: RigConfig, material: MaterialSpec) -> float:
    """Tangential force at full actuator travel with no sliding [N]"""
    return effective_stiffness(rig, material) * rig.travel


def slips_within_travel(f_n: float, rig: RigConfig, material: MaterialSpec) -> bool:
    return material.mu * f_n * rig.kpa_to_newton < max_tangential_force(rig, material)


def non_slipping_f_n(rig: RigConfig, material: MaterialSpec) -> list[float]:
    """Grid normal forces [kPa] the full stroke cannot break loose"""
    return [f_n for f_n in rig.f_n_grid if not slips_within_travel(f_n, rig, material)]


def randomize_f_n(rig: RigConfig, seed: Union[int, np.random.Generator]) -> float:
    grid = rig.f_n_grid
    if not grid:
        raise ConfigError(
            f"Empty normal force grid [{rig.f_n_grid_lo}, {rig.f_n_grid_hi}] step {rig.f_n_grid_step}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return float(grid[int(rng.integers(len(grid)))])


def initial_state(f_n: float) -> ContactState:
    if f_n < 0:
        raise ContactError(f"Normal force must not be negative, got {f_n}")
    return ContactState(f_n=f_n, f_t=0.0, stick_ratio_true=1.0 if f_n > 0 else 0.0, y=0.0)


def step_rig(
    state: ContactState,
    rig: RigConfig,
    material: MaterialSpec,
    actuator_step: Optional[float] = None,
    f_n: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> ContactState:
    """
    Advances the rig by one actuator step
    :param state: current state
    :param rig: rig configuration
    :param material: object material
    :param actuator_step: advance override [mm], defaults to rig.actuator_step
    :param f_n: normal force override [kPa], used by the stabilization loop
    :param rng: generator drawing the gross slip jump, None means the median jump
    :return: next state
    """
    f_n = state.f_n if f_n is None else f_n
    if f_n < 0:
        raise ContactError(f"Normal force must not be negative, got {f_n}")
    advance = rig.actuator_step if actuator_step is None else actuator_step
    if state.step >= rig.total_steps:
        advance = 0.0
    x = state.x_act + advance
    y_slip = state.y_slip

    k_eff = effective_stiffness(rig, material)
    k_sh = material.shear_stiffness
    limit = material.mu * f_n * rig.kpa_to_newton
    f_t = k_eff * max(x - y_slip, 0.0)
    f_t_peak = f_t
    slipped = False

    if f_t > 0 and f_t >= limit:
        # the object travels at least until the spring is back to the kinetic level
        draw = rig.slip_jump
        if rng is not None and rig.slip_jump_sigma > 0:
            draw *= float(rng.lognormal(0.0, rig.slip_jump_sigma))
        jump = max((f_t - rig.kinetic_ratio * limit) / k_eff, draw)
        jump = min(jump, x - y_slip)
        y_slip += jump
        f_t = k_eff * max(x - y_slip, 0.0)
        slipped = True

    if f_n > 0:
        s = stick_ratio_partial_slip(f_t, f_n * rig.kpa_to_newton, material.mu)
    else:
        s = 0.0
    return ContactState(
        f_n=f_n,
        f_t=f_t,
        stick_ratio_true=s,
        y=y_slip + f_t / k_sh,
        t=state.t + rig.sample_window_T,
        step=state.step + 1,
        x_act=x,
        y_slip=y_slip,
        f_t_peak=f_t_peak,
        slipped=slipped,
    )


def run_rig(
    f_n: float,
    rig: RigConfig,
    material: MaterialSpec,
    rng: Optional[np.random.Generator] = None,
    fn_rng: Optional[np.random.Generator] = None,
) -> list[ContactState]:
    """
    Runs the whole actuator schedule from rest
    :return: total_steps + 1 states, the first one at rest
    """
    states = [initial_state(f_n)]
    for _ in range(rig.total_steps):
        step_f_n = None
        if rig.fn_schedule == FnScheduleEnum.PER_STEP and fn_rng is not None:
            step_f_n = randomize_f_n(rig, fn_rng)
        states.append(step_rig(states[-1], rig, material, f_n=step_f_n, rng=rng))
    return states


def first_slip_step(states: list[ContactState]) -> Optional[int]:
    for i, state in enumerate(states):
        if state.slipped:
            return i
    return None


def expected_slip_step(f_n: float, rig: RigConfig, material: MaterialSpec) -> Optional[int]:
    """First step at which static friction breaks for a constant normal force"""
    limit = material.mu * f_n * rig.kpa_to_newton
    if rig.actuator_step <= 0 or not slips_within_travel(f_n, rig, material):
        return None
    step = math.ceil(limit / effective_stiffness(rig, material) / rig.actuator_step - 1e-12)
    return max(step, 1)

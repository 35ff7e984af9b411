import numpy as np
import pytest
from scipy.optimize import brentq

from slipbench.contact import (
    expected_slip_step,
    first_slip_step,
    initial_state,
    non_slipping_f_n,
    randomize_f_n,
    run_rig,
    step_rig,
    stick_ratio_partial_slip,
)
from slipbench.models import (
    MATERIAL_PRESETS,
    ConfigError,
    ContactError,
    FnScheduleEnum,
    RigConfig,
)
from slipbench.utils import Stream, derive_rng
from tests import TEST_SEED
from tests.conftest import get_test_materials


@pytest.mark.parametrize(
    "f_t,f_n,mu,expected",
    [
        (0.0, 5.0, 0.5, 1.0),
        (2.5, 5.0, 0.5, 0.0),
        (3.0, 5.0, 0.5, 0.0),
        (1.22, 5.0, 0.5, 0.640),
    ],
)
def test_stick_ratio_examples(f_t: float, f_n: float, mu: float, expected: float):
    assert stick_ratio_partial_slip(f_t, f_n, mu) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("f_n", [0.0, -1.0])
def test_stick_ratio_no_contact(f_n: float):
    with pytest.raises(ContactError):
        stick_ratio_partial_slip(0.1, f_n, 0.5)


def test_stick_ratio_matches_annulus_radius():
    # stick radius c/a solves f_t/(mu f_n) = 1 - (c/a)^3, stick area is (c/a)^2
    f_n, mu = 4.0, 0.6
    for f_t in np.linspace(0.05, 0.95 * mu * f_n, 15):
        radius = brentq(lambda c: 1 - c**3 - f_t / (mu * f_n), 0.0, 1.0, xtol=1e-14)
        assert stick_ratio_partial_slip(f_t, f_n, mu) == pytest.approx(radius**2, abs=1e-9)


def test_stick_ratio_monotone_and_clamped():
    f_n, mu = 5.0, 0.5
    values = [stick_ratio_partial_slip(f_t, f_n, mu) for f_t in np.linspace(0, 3, 301)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[0] == 1.0
    assert stick_ratio_partial_slip(mu * f_n, f_n, mu) == 0.0
    assert stick_ratio_partial_slip(mu * f_n * (1 - 1e-9), f_n, mu) > 0.0


def test_step_rig_zero_motion():
    rig = RigConfig()
    material = MATERIAL_PRESETS["pla"]
    state = step_rig(initial_state(3.0), rig, material)
    after = step_rig(state, rig, material, actuator_step=0.0)
    assert after.f_t == state.f_t
    assert after.y == state.y
    assert after.stick_ratio_true == state.stick_ratio_true


def test_step_rig_spring_law_before_slip():
    rig = RigConfig()
    material = MATERIAL_PRESETS["pla"]
    states = run_rig(5.9, rig, material)
    loading = states[: first_slip_step(states)]
    f_t = [s.f_t for s in loading]
    assert all(b > a for a, b in zip(f_t, f_t[1:]))
    assert all(s.f_t <= material.mu * s.f_n * rig.kpa_to_newton for s in loading)
    assert all(s.y == pytest.approx(s.f_t / material.shear_stiffness) for s in loading)


@pytest.mark.parametrize("material", get_test_materials())
def test_whole_grid_slips_within_travel(material: str):
    assert non_slipping_f_n(RigConfig(), MATERIAL_PRESETS[material]) == []


def test_soft_spring_cannot_slip_high_grip():
    rig = RigConfig(spring_constant=0.02)
    stuck = non_slipping_f_n(rig, MATERIAL_PRESETS["pla"])
    assert stuck
    assert stuck == sorted(stuck)
    assert stuck[-1] == rig.f_n_grid[-1]
    assert first_slip_step(run_rig(stuck[0], rig, MATERIAL_PRESETS["pla"])) is None


def test_step_rig_saturates_at_travel_end():
    rig = RigConfig(total_steps=5)
    material = MATERIAL_PRESETS["pla"]
    states = run_rig(5.9, rig, material)
    extra = step_rig(states[-1], rig, material)
    assert extra.x_act == pytest.approx(states[-1].x_act)
    assert extra.f_t == pytest.approx(states[-1].f_t)


def test_gross_slip_travel_calibration():
    rig = RigConfig()
    travel = []
    for trial in range(20):
        states = run_rig(
            2.3, rig, MATERIAL_PRESETS["pla"], rng=derive_rng(TEST_SEED, trial, Stream.CONTACT)
        )
        step = first_slip_step(states)
        assert step is not None
        travel.append(states[step].y)
    assert np.mean(travel) == pytest.approx(1.5, abs=0.4)
    assert all(abs(y - 1.5) < 0.6 for y in travel)


@pytest.mark.parametrize("f_n", RigConfig().f_n_grid)
@pytest.mark.parametrize("material", get_test_materials())
def test_slip_force_matches_friction_limit(material: str, f_n: float):
    rig = RigConfig()
    spec = MATERIAL_PRESETS[material]
    states = run_rig(f_n, rig, spec, rng=derive_rng(TEST_SEED, Stream.CONTACT))
    step = first_slip_step(states)
    limit = spec.mu * f_n * rig.kpa_to_newton
    assert step is not None
    assert step == expected_slip_step(f_n, rig, spec)
    assert states[step].f_t_peak == pytest.approx(limit, rel=0.05)
    assert all(s.f_t <= limit for s in states[:step])


@pytest.mark.parametrize("material", get_test_materials())
def test_higher_normal_force_delays_slip(material: str):
    rig = RigConfig()
    steps = [
        first_slip_step(run_rig(f_n, rig, MATERIAL_PRESETS[material]))
        for f_n in [1.1, 1.5, 1.9, 2.3]
    ]
    assert None not in steps
    assert all(b > a for a, b in zip(steps, steps[1:]))


def test_run_rig_reproducible():
    rig = RigConfig(fn_schedule=FnScheduleEnum.PER_STEP)
    material = MATERIAL_PRESETS["abs"]

    def trajectory():
        return run_rig(
            2.3,
            rig,
            material,
            rng=derive_rng(TEST_SEED, 0, Stream.CONTACT),
            fn_rng=derive_rng(TEST_SEED, 0, Stream.F_N),
        )

    first, second = trajectory(), trajectory()
    assert [s.model_dump() for s in first] == [s.model_dump() for s in second]
    assert len({s.f_n for s in first}) > 1


def test_default_rig():
    rig = RigConfig()
    assert rig.total_steps == 450
    assert rig.travel == pytest.approx(23.0)
    assert rig.f_n_grid == [1.1, 1.5, 1.9, 2.3, 2.7, 3.1, 3.5, 3.9, 4.3, 4.7, 5.1, 5.5, 5.9]


def test_randomize_f_n_single_candidate():
    rig = RigConfig(f_n_grid_lo=2.3, f_n_grid_hi=2.3)
    assert randomize_f_n(rig, 0) == 2.3
    assert randomize_f_n(rig, 99) == 2.3


def test_randomize_f_n_empty_grid():
    with pytest.raises(ConfigError):
        randomize_f_n(RigConfig(f_n_grid_lo=3.0, f_n_grid_hi=2.0), 0)


def test_randomize_f_n_uniform():
    rig = RigConfig()
    rng = np.random.default_rng(TEST_SEED)
    draws = [randomize_f_n(rig, rng) for _ in range(10_000)]
    values, counts = np.unique(draws, return_counts=True)
    assert list(values) == rig.f_n_grid
    assert np.all(np.abs(counts / len(draws) - 1 / 13) < 0.02)


def test_randomize_f_n_deterministic():
    rig = RigConfig()
    assert [randomize_f_n(rig, s) for s in range(50)] == [randomize_f_n(rig, s) for s in range(50)]

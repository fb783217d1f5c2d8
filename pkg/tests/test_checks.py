import json

import pytest

from diffgan_tts.checks import (
    CHECK_NAMES,
    check_alpha_bar,
    check_gradients,
    check_losses,
    check_moments,
    check_posterior,
    check_schedule,
    decimal_log_alpha_bar,
    first_failure,
    format_report,
    report_json,
    run_checks,
)
from diffgan_tts.diffusion import make_variance_schedule


def scaled_schedule(T, beta_min=0.1, beta_max=40.0):
    """Off by a factor in beta_max: close, but not the schedule."""
    return make_variance_schedule(T, beta_min, beta_max * 1.01)


def test_analytic_checks_pass():
    for check in (check_schedule, check_alpha_bar, check_posterior):
        result = check(make_variance_schedule)
        assert result.passed, result.detail
    assert check_losses().passed


@pytest.mark.parametrize("T", [4, 65, 1000])
def test_alpha_bar_within_fixed_tolerance_at_any_T(T):
    sched = make_variance_schedule(T, 0.1, 40.0)
    for t, ref in enumerate(decimal_log_alpha_bar(T, 0.1, 40.0), start=1):
        assert sched.log_alphas_cumprod[t] == pytest.approx(float(ref), rel=1e-12)
        assert sched.alpha_bar(t) == pytest.approx(float(ref.exp()), rel=1e-12)


def test_alpha_bar_check_rejects_a_slightly_scaled_schedule():
    result = check_alpha_bar(scaled_schedule)
    assert not result.passed
    assert "max rel err" in result.detail


def test_wrong_beta_formula_fails_schedule_check():
    result = check_schedule(scaled_schedule)
    assert not result.passed
    assert "T=" in result.detail


def test_moments_with_fewer_samples():
    result = check_moments(make_variance_schedule, n=2000)
    assert result.passed, result.detail


def test_gradient_check_on_selected_blocks():
    result = check_gradients(max_coords=3, names=["fft_block", "adaln_modulate", "jcu_discriminator"])
    assert result.passed, result.detail


def test_run_checks_subset_and_json():
    results = run_checks(only=["schedule", "losses"])
    assert [r.name for r in results] == ["schedule", "losses"]
    assert first_failure(results) is None
    payload = json.loads(report_json(results))
    assert payload["passed"] is True and payload["first_failure"] is None
    assert {c["name"] for c in payload["checks"]} == {"schedule", "losses"}
    assert "| check" in format_report(results)


def test_run_checks_reports_first_failure():
    results = run_checks(schedule_fn=scaled_schedule, only=["schedule", "posterior"])
    assert first_failure(results).name == "schedule"
    assert json.loads(report_json(results))["first_failure"] == "schedule"


def test_crashing_check_is_a_failure():
    def broken(T, beta_min=0.1, beta_max=40.0):
        raise RuntimeError("no schedule today")

    (result,) = run_checks(schedule_fn=broken, only=["alpha_bar"])
    assert not result.passed
    assert "RuntimeError" in result.detail


@pytest.mark.slow
def test_full_check_suite():
    results = run_checks(grad_coords=None)
    assert [r.name for r in results] == list(CHECK_NAMES)
    assert first_failure(results) is None, format_report(results)

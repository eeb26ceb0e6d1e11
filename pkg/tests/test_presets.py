import pytest

from evolgrad import presets
from evolgrad.operator import parse_spec_document
from evolgrad.presets import PresetError


def test_catalog_names():
    assert presets.names() == ["block2d", "example41", "heat", "ou", "wang-counterexample"]


@pytest.mark.parametrize("name", presets.names())
def test_defaults_build(name):
    op = presets.build(name)
    assert (op.t_lo, op.t_hi) == (presets.T_LO, presets.T_HI)
    assert op.lyapunov is not None and op.lyapunov_gamma is not None
    assert op.eta is not None


@pytest.mark.parametrize("name", presets.names())
def test_rendering_is_deterministic(name):
    assert presets.instantiate(name) == presets.instantiate(name)


def test_overrides_reach_document():
    spec = parse_spec_document(presets.instantiate("example41", {"gamma": "4 + sin(t)", "t_lo": 0, "t_hi": 3}))
    assert spec.params["gamma"] == "4 + sin(t)"
    assert (spec.t_lo, spec.t_hi) == (0.0, 3.0)


def test_integer_beta_uses_plain_norm():
    assert "norm2(x)^beta" not in presets.instantiate("example41")
    assert "norm2(x)^beta" in presets.instantiate("example41", {"beta": 1.5})


def test_lyapunov_gamma_tracks_parameters():
    spec = parse_spec_document(presets.instantiate("example41", {"a1": 2, "a2": 2, "a3": 2, "gamma": 5}))
    assert spec.lyapunov_gamma == 12.0


@pytest.mark.parametrize(
    "name, params, message",
    [
        ("example41", {"gamma": 2}, "requires gamma > 2"),
        ("example41", {"psi": 2, "gamma": 5}, r"requires gamma > 8"),
        ("example41", {"a1": "cos(t)"}, "a1 > 0"),
        ("example41", {"beta": 0.5}, "beta >= 1"),
        ("example41", {"beta": "t"}, "beta must be a number"),
        ("example41", {"a1": "x1"}, "t only"),
        ("block2d", {"gamma": 1}, "requires gamma"),
        ("heat", {"a": -1}, "a > 0"),
        ("ou", {"kappa": 0}, "kappa > 0"),
        ("wang-counterexample", {"gamma": 1}, "gamma >= 2"),
        ("heat", {"b": 1}, "no parameter 'b'"),
        ("heat", {"t_lo": 3, "t_hi": 1}, "t_lo < t_hi"),
        ("heat", {"a": "1 +"}, "bad parameter expression"),
        ("nope", {}, "unknown preset"),
    ],
)
def test_constraint_violations(name, params, message):
    with pytest.raises(PresetError, match=message):
        presets.instantiate(name, params)


def test_time_dependent_gamma_checked_over_interval():
    # gamma = 2.5 + 2 sin(t) dips below 3 on part of the interval
    with pytest.raises(PresetError, match="at t="):
        presets.instantiate("example41", {"gamma": "2.5 + 2*sin(t)"})

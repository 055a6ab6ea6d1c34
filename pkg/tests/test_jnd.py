import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panosim.jnd import (
    DEFAULT_CONFIG_TEXT,
    ActionState,
    ContentJndParams,
    JndConfigError,
    JndModel,
    MultiplierCurve,
    action_ratio,
    content_jnd,
    eval_multiplier,
    jnd_360,
    load_jnd_config,
    parse_jnd_config,
)

MODEL = JndModel()


@pytest.mark.parametrize("lum,tex,expected", [(127, 0, 3.0), (0, 0, 20.0), (127, 10, 4.0)])
def test_content_jnd_examples(lum, tex, expected):
    assert content_jnd(lum, tex) == pytest.approx(expected)


def test_content_jnd_bright_branch():
    p = ContentJndParams()
    assert content_jnd(255, 0) == pytest.approx(p.slope * 128 + p.t1)


def test_multiplier_examples():
    assert eval_multiplier(MODEL.speed, 0) == 1.0
    assert eval_multiplier(MODEL.speed, 10) == 1.5
    assert eval_multiplier(MODEL.luminance, 100) == pytest.approx(1.25)
    # the last segment is extended, then capped
    assert eval_multiplier(MODEL.speed, 20) == pytest.approx(2.0)
    assert eval_multiplier(MODEL.speed, 1000) == 3.0
    assert eval_multiplier(MODEL.speed, -5) == 1.0


def test_action_ratio_examples():
    assert action_ratio(ActionState()) == 1.0
    assert action_ratio(ActionState(10, 200, 0.7)) == pytest.approx(3.375)
    custom = JndModel(speed=MultiplierCurve(((0, 1), (1, 1.5))), dof=MultiplierCurve(((0, 1), (1, 1.0))),
                      luminance=MultiplierCurve(((0, 1), (1, 1.2))))
    assert action_ratio(ActionState(1, 1, 1), custom) == pytest.approx(1.8)


def test_jnd_360_examples():
    assert jnd_360(5.0, ActionState()) == 5.0
    assert jnd_360(content_jnd(127, 0), ActionState(rel_speed=10)) == pytest.approx(4.5)
    with pytest.raises(ValueError):
        jnd_360(0.0, ActionState())
    with pytest.raises(ValueError):
        ActionState(rel_speed=-1)


def test_curve_validation():
    with pytest.raises(JndConfigError):
        MultiplierCurve(((1, 1), (2, 2)))
    with pytest.raises(JndConfigError):
        MultiplierCurve(((0, 1), (2, 2), (1, 3)))
    with pytest.raises(JndConfigError):
        MultiplierCurve(((0, 1), (1, 0.5)))


def test_default_config_text_matches_defaults(tmp_path):
    assert parse_jnd_config(DEFAULT_CONFIG_TEXT) == JndModel()
    path = tmp_path / "jnd.toml"
    path.write_text("[speed]\nknots = [[0, 1], [5, 2]]\n")
    model = load_jnd_config(path)
    assert model.speed(5) == 2.0 and model.dof == JndModel().dof
    with pytest.raises(JndConfigError):
        parse_jnd_config("[speed\n")


curves = st.lists(st.tuples(st.floats(0.1, 50), st.floats(0, 1)), min_size=1, max_size=4).map(
    lambda pts: MultiplierCurve(((0.0, 1.0),) + tuple(
        (sum(p[0] for p in pts[: i + 1]), 1.0 + sum(p[1] for p in pts[: i + 1])) for i in range(len(pts))), cap=4.0))
factor = st.floats(0, 300, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(curves, curves, curves, factor, factor, factor, st.floats(0, 50))
def test_jnd_monotone_in_each_factor(cv, cl, cd, v, l, d, bump):
    model = JndModel(speed=cv, luminance=cl, dof=cd)
    base = jnd_360(4.0, ActionState(v, l, d), model)
    assert jnd_360(4.0, ActionState(v + bump, l, d), model) >= base
    assert jnd_360(4.0, ActionState(v, l + bump, d), model) >= base
    assert jnd_360(4.0, ActionState(v, l, d + bump), model) >= base


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), factor, factor, factor)
def test_scale_equivariance_and_positivity(c, v, l, d):
    s = ActionState(v, l, d)
    assert jnd_360(2 * c, s) == pytest.approx(2 * jnd_360(c, s), rel=1e-12)
    assert jnd_360(c, s) > 0


def test_vectorised_ratio_matches_scalar():
    rng = np.random.default_rng(0)
    v, l, d = rng.uniform(0, 40, 50), rng.uniform(0, 300, 50), rng.uniform(0, 2, 50)
    vec = MODEL.ratio(v, l, d)
    assert np.allclose(vec, [action_ratio(ActionState(*x)) for x in zip(v, l, d)], rtol=0, atol=1e-15)

"""360-degree JND: content JND scaled by viewpoint-movement multipliers.

``JND = C * F_v(speed) * F_d(dof_diff) * F_l(luminance_change)``. The content
JND ``C`` depends only on the pixels; the product of the three multipliers
(the action ratio) depends only on how the viewer moves, which is what lets
the server precompute content terms and the client supply the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# Factor values at which a viewer tolerates 50% more distortion than when static.
SPEED_THRESHOLD = 10.0  # deg/s
LUMINANCE_THRESHOLD = 200.0  # gray levels
DOF_THRESHOLD = 0.7  # diopters
THRESHOLD_MULTIPLIER = 1.5
DEFAULT_CAP = 3.0

LUMINANCE_WINDOW_S = 5.0


class JndConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MultiplierCurve:
    """Piecewise-linear multiplier over a non-negative factor value.

    Past the last knot the final segment is extended; the result is clamped
    to ``[1, cap]``.
    """

    knots: tuple[tuple[float, float], ...]
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        knots = tuple((float(x), float(m)) for x, m in self.knots)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "cap", float(self.cap))
        if not knots or knots[0] != (0.0, 1.0):
            raise JndConfigError(f"first knot must be (0, 1), got {knots[:1]}")
        xs = [x for x, _ in knots]
        ms = [m for _, m in knots]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise JndConfigError("knot x values must be strictly increasing")
        if any(b < a for a, b in zip(ms, ms[1:])):
            raise JndConfigError("knot multipliers must be non-decreasing")
        if self.cap < 1.0:
            raise JndConfigError("cap must be >= 1")

    @classmethod
    def threshold(cls, x: float, multiplier: float = THRESHOLD_MULTIPLIER, cap: float = DEFAULT_CAP):
        return cls(((0.0, 1.0), (x, multiplier)), cap)

    def __call__(self, x):
        return eval_multiplier(self, x)


def eval_multiplier(curve: MultiplierCurve, x):
    """Evaluate ``curve`` at ``x`` (scalar or array); negative x is treated as 0."""
    xs = np.array([k[0] for k in curve.knots])
    ms = np.array([k[1] for k in curve.knots])
    xv = np.maximum(np.asarray(x, dtype=float), 0.0)
    if len(xs) == 1:
        out = np.ones_like(xv)
    else:
        out = np.interp(xv, xs, ms)
        slope = (ms[-1] - ms[-2]) / (xs[-1] - xs[-2])
        out = np.where(xv > xs[-1], ms[-1] + slope * (xv - xs[-1]), out)
    out = np.clip(out, 1.0, curve.cap)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ActionState:
    rel_speed: float = 0.0
    luminance_change: float = 0.0
    dof_diff: float = 0.0

    def __post_init__(self):
        for name in ("rel_speed", "luminance_change", "dof_diff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ContentJndParams:
    """Luminance-masking curve plus a linear texture-masking term."""

    t0: float = 17.0
    t1: float = 3.0
    slope: float = 3.0 / 128.0
    texture_weight: float = 0.1

    def __post_init__(self):
        for name in ("t0", "t1", "slope", "texture_weight"):
            if not getattr(self, name) > 0:
                raise JndConfigError(f"content JND constant {name} must be > 0")


@dataclass(frozen=True)
class JndModel:
    speed: MultiplierCurve = field(default_factory=lambda: MultiplierCurve.threshold(SPEED_THRESHOLD))
    luminance: MultiplierCurve = field(default_factory=lambda: MultiplierCurve.threshold(LUMINANCE_THRESHOLD))
    dof: MultiplierCurve = field(default_factory=lambda: MultiplierCurve.threshold(DOF_THRESHOLD))
    content: ContentJndParams = field(default_factory=ContentJndParams)

    def ratio(self, rel_speed, luminance_change, dof_diff):
        """Vectorised action ratio for arrays of factor values."""
        return self.speed(rel_speed) * self.dof(dof_diff) * self.luminance(luminance_change)

    def content_jnd(self, luminance, texture):
        return content_jnd(luminance, texture, self.content)


def content_jnd(luminance, texture, params: ContentJndParams = ContentJndParams()):
    """Static-viewer JND in gray levels from background luminance and texture."""
    lum = np.asarray(luminance, dtype=float)
    tex = np.asarray(texture, dtype=float)
    dark = params.t0 * (1.0 - np.sqrt(np.clip(lum, 0.0, None) / 127.0)) + params.t1
    bright = params.slope * (lum - 127.0) + params.t1
    out = np.where(lum <= 127.0, dark, bright) + params.texture_weight * tex
    return float(out) if np.ndim(out) == 0 else out


def action_ratio(state: ActionState, model: JndModel = JndModel()) -> float:
    return float(model.ratio(state.rel_speed, state.luminance_change, state.dof_diff))


def jnd_360(c, state: ActionState, model: JndModel = JndModel()):
    if np.any(np.asarray(c) <= 0):
        raise ValueError("content JND must be positive")
    return c * action_ratio(state, model)


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------

DEFAULT_CONFIG_TEXT = f"""\
# Multiplier curves: (factor value, multiplier) knots, first knot (0, 1).
# Evaluated piecewise-linearly, extended past the last knot, clamped at cap.

[speed]        # relative viewpoint speed, deg/s
knots = [[0.0, 1.0], [{SPEED_THRESHOLD}, {THRESHOLD_MULTIPLIER}]]
cap = {DEFAULT_CAP}

[luminance]    # luminance change over the last {LUMINANCE_WINDOW_S:g} s, gray levels
knots = [[0.0, 1.0], [{LUMINANCE_THRESHOLD}, {THRESHOLD_MULTIPLIER}]]
cap = {DEFAULT_CAP}

[dof]          # depth-of-field difference, diopters
knots = [[0.0, 1.0], [{DOF_THRESHOLD}, {THRESHOLD_MULTIPLIER}]]
cap = {DEFAULT_CAP}

[content]
t0 = 17.0
t1 = 3.0
slope = {3.0 / 128.0!r}
texture_weight = 0.1
"""


def _curve(section: dict, name: str, default: MultiplierCurve) -> MultiplierCurve:
    if name not in section:
        return default
    body = section[name]
    try:
        knots = tuple((float(x), float(m)) for x, m in body.get("knots", default.knots))
        return MultiplierCurve(knots, float(body.get("cap", default.cap)))
    except (TypeError, ValueError) as exc:
        raise JndConfigError(f"[{name}]: {exc}") from None


def parse_jnd_config(text: str) -> JndModel:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise JndConfigError(str(exc)) from None
    base = JndModel()
    content = data.get("content", {})
    try:
        params = ContentJndParams(**{k: float(v) for k, v in content.items()})
    except TypeError as exc:
        raise JndConfigError(f"[content]: {exc}") from None
    return JndModel(
        speed=_curve(data, "speed", base.speed),
        luminance=_curve(data, "luminance", base.luminance),
        dof=_curve(data, "dof", base.dof),
        content=params,
    )


def load_jnd_config(path=None) -> JndModel:
    if path is None:
        return JndModel()
    return parse_jnd_config(Path(path).read_text())


def max_ratio(model: JndModel, maxima: tuple[float, float, float]) -> float:
    v, l, d = maxima
    return float(model.ratio(v, l, d))


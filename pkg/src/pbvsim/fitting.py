"""
Damped least-squares fitting engine and the model zoo used by the simulator.

Every model is a :class:`ModelSpec`; :func:`fit` runs a Levenberg-Marquardt
iteration with a forward-difference Jacobian and bound projection, and
:func:`profile_initializer` supplies heuristic starting points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks, peak_widths

from .constants import H, K_B
from .errors import FlatDataError, InvalidInputError, RankDeficientError

MODEL_NAMES = (
    "lorentzian",
    "multi_lorentzian",
    "dip_lorentzian",
    "mono_exponential",
    "saturation_rate",
    "orbach",
    "orbach_raman",
)

FD_REL_STEP = 1e-6
_TINY = 1e-300


@dataclass(frozen=True)
class ModelSpec:
    """A parametric model ``y = evaluate(params, x)`` with box bounds."""

    name: str
    param_names: tuple
    lower: tuple
    upper: tuple
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    options: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def bounds(self):
        return list(zip(self.lower, self.upper))

    def __call__(self, params, x):
        return self.evaluate(np.asarray(params, dtype=float), np.asarray(x, dtype=float))

    def clip(self, params):
        return np.clip(np.asarray(params, dtype=float), self.lower, self.upper)


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``sigma`` holds 1-sigma uncertainties from the linearized covariance
    scaled by the reduced chi-square. ``history`` lists the weighted
    residual norm after every accepted step, starting with the initial one.
    """

    model: str
    param_names: tuple
    params: np.ndarray
    sigma: np.ndarray
    residual_norm: float
    converged: bool
    n_iterations: int
    message: str = ""
    history: list = field(default_factory=list)

    def __getitem__(self, name):
        return float(self.params[self.param_names.index(name)])

    def error(self, name):
        return float(self.sigma[self.param_names.index(name)])

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {
                n: {"value": float(v), "sigma": float(s)}
                for n, v, s in zip(self.param_names, self.params, self.sigma)
            },
            "residual_norm": float(self.residual_norm),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
        }


# -- model zoo ---------------------------------------------------------------


def _lorentz_peak(x, center, fwhm):
    hw = 0.5 * fwhm
    return hw * hw / ((x - center) ** 2 + hw * hw)


def lorentzian() -> ModelSpec:
    """Single Lorentzian parameterized by (center, fwhm, area, baseline)."""

    def evaluate(p, x):
        c, w, a, b = p
        return b + a * (0.5 * w / np.pi) / ((x - c) ** 2 + (0.5 * w) ** 2)

    inf = np.inf
    return ModelSpec(
        "lorentzian",
        ("center", "fwhm", "area", "baseline"),
        (-inf, _TINY, -inf, -inf),
        (inf, inf, inf, inf),
        evaluate,
    )


def multi_lorentzian(n_peaks: int) -> ModelSpec:
    """Sum of ``n_peaks`` Lorentzians on a shared baseline.

    Parameters are ``(center_i, fwhm_i, area_i)`` for each peak followed by
    the baseline. The peak count is the caller's choice.
    """
    if n_peaks < 1:
        raise InvalidInputError("n_peaks must be >= 1")
    single = lorentzian().evaluate

    def evaluate(p, x):
        y = np.full_like(x, p[-1], dtype=float)
        for i in range(n_peaks):
            y += single(np.r_[p[3 * i:3 * i + 3], 0.0], x)
        return y

    names, lo, hi = [], [], []
    for i in range(n_peaks):
        names += [f"center_{i}", f"fwhm_{i}", f"area_{i}"]
        lo += [-np.inf, _TINY, -np.inf]
        hi += [np.inf, np.inf, np.inf]
    return ModelSpec(
        "multi_lorentzian",
        tuple(names) + ("baseline",),
        tuple(lo) + (-np.inf,),
        tuple(hi) + (np.inf,),
        evaluate,
        {"n_peaks": n_peaks},
    )


def dip_lorentzian() -> ModelSpec:
    """Inverted Lorentzian dip ``background * (1 - contrast * L(x))``."""

    def evaluate(p, x):
        c, w, k, bg = p
        return bg * (1.0 - k * _lorentz_peak(x, c, w))

    inf = np.inf
    return ModelSpec(
        "dip_lorentzian",
        ("center", "fwhm", "contrast", "background"),
        (-inf, _TINY, -inf, -inf),
        (inf, inf, inf, inf),
        evaluate,
    )


def mono_exponential() -> ModelSpec:
    """``offset + amplitude * exp(-x / tau)``."""

    def evaluate(p, x):
        a, tau, off = p
        return off + a * np.exp(-x / tau)

    inf = np.inf
    return ModelSpec(
        "mono_exponential",
        ("amplitude", "tau", "offset"),
        (-inf, _TINY, -inf),
        (inf, inf, inf),
        evaluate,
    )


def saturation_rate(gamma_rad: float) -> ModelSpec:
    """Initialization rate ``(G/2) s/(1+s) / eta`` with ``s = P/p_sat``.

    The spontaneous emission rate ``gamma_rad`` is held fixed.
    """

    def evaluate(p, x):
        p_sat, eta = p
        s = x / p_sat
        return 0.5 * gamma_rad * s / (1.0 + s) / eta

    return ModelSpec(
        "saturation_rate",
        ("p_sat", "eta"),
        (_TINY, _TINY),
        (np.inf, np.inf),
        evaluate,
        {"gamma_rad": gamma_rad},
    )


def bose_factor(temperature, delta_hz, alpha=1.0):
    """``1 / (exp(alpha h delta / kB T) - 1)``."""
    t = np.asarray(temperature, dtype=float)
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(alpha * H * delta_hz / (K_B * t))


def orbach(delta_gs: float) -> ModelSpec:
    """Modified Orbach rate ``a / (exp(alpha h delta / kB T) - 1)``.

    The cube of the splitting is folded into ``a``.
    """

    def evaluate(p, x):
        a, alpha = p
        return a * bose_factor(x, delta_gs, alpha)

    return ModelSpec(
        "orbach",
        ("a_orbach", "alpha"),
        (0.0, 1e-3),
        (np.inf, 10.0),
        evaluate,
        {"delta_gs": delta_gs},
    )


def orbach_raman(delta_gs: float, alpha: float = 1.0) -> ModelSpec:
    """Orbach term at fixed ``alpha`` plus a ``T**7`` Raman term."""

    def evaluate(p, x):
        a, b = p
        return a * bose_factor(x, delta_gs, alpha) + b * x ** 7

    return ModelSpec(
        "orbach_raman",
        ("a_orbach", "a_raman"),
        (0.0, 0.0),
        (np.inf, np.inf),
        evaluate,
        {"delta_gs": delta_gs, "alpha": alpha},
    )


def get_model(name: str, **options) -> ModelSpec:
    factories = {
        "lorentzian": lorentzian,
        "multi_lorentzian": multi_lorentzian,
        "dip_lorentzian": dip_lorentzian,
        "mono_exponential": mono_exponential,
        "saturation_rate": saturation_rate,
        "orbach": orbach,
        "orbach_raman": orbach_raman,
    }
    if name not in factories:
        raise InvalidInputError(f"unknown model {name!r}")
    return factories[name](**options)


# -- initial guesses ---------------------------------------------------------


def _half_width(x, y, i_ext, level):
    """Width of the contiguous region around ``i_ext`` where ``y >= level``."""
    n = len(x)
    lo = i_ext
    while lo > 0 and y[lo - 1] >= level:
        lo -= 1
    hi = i_ext
    while hi < n - 1 and y[hi + 1] >= level:
        hi += 1
    # linear interpolation of the crossings
    if lo > 0:
        xl = np.interp(level, [y[lo - 1], y[lo]], [x[lo - 1], x[lo]])
    else:
        xl = x[0]
    if hi < n - 1:
        xr = np.interp(level, [y[hi + 1], y[hi]], [x[hi + 1], x[hi]])
    else:
        xr = x[-1]
    width = xr - xl
    if width <= 0:
        width = np.min(np.diff(x)) if n > 1 else 1.0
    return width


def profile_initializer(model: ModelSpec, x, y) -> np.ndarray:
    """Heuristic starting point for ``model`` from the data alone."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        raise InvalidInputError("empty data")
    if np.ptp(y) == 0:
        raise FlatDataError("constant y carries no shape information")
    order = np.argsort(x)
    x, y = x[order], y[order]
    name = model.name

    if name == "lorentzian":
        base = np.min(y)
        i = int(np.argmax(y))
        height = y[i] - base
        w = _half_width(x, y - base, i, 0.5 * height)
        p0 = [x[i], w, height * np.pi * w / 2, base]
    elif name == "multi_lorentzian":
        n = model.options["n_peaks"]
        base = np.min(y)
        peaks, props = find_peaks(y - base, prominence=0)
        if len(peaks) == 0:
            peaks = np.array([int(np.argmax(y))])
        top = peaks[np.argsort(y[peaks])[::-1][:n]]
        top = np.sort(top)
        widths = peak_widths(y - base, top, rel_height=0.5)[0]
        dx = np.mean(np.diff(x)) if len(x) > 1 else 1.0
        p0 = []
        for k in range(n):
            j = top[k % len(top)]
            w = max(widths[k % len(top)] * dx, dx)
            p0 += [x[j], w, (y[j] - base) * np.pi * w / 2]
        p0.append(base)
    elif name == "dip_lorentzian":
        bg = np.percentile(y, 90)
        i = int(np.argmin(y))
        depth = bg - y[i]
        w = _half_width(x, bg - y, i, 0.5 * depth)
        p0 = [x[i], w, depth / bg if bg != 0 else 1.0, bg]
    elif name == "mono_exponential":
        n_tail = max(1, len(y) // 10)
        tail = np.mean(y[-n_tail:])
        head = np.mean(y[: max(1, len(y) // 20)])
        sign = 1.0 if head > tail else -1.0
        offset = tail - sign * 0.01 * np.ptp(y)
        dy = sign * (y - offset)
        keep = dy > 0.05 * np.max(dy)
        if keep.sum() >= 2:
            slope, intercept = np.polyfit(x[keep], np.log(dy[keep]), 1)
        else:
            slope, intercept = -1.0 / np.ptp(x), np.log(np.max(dy))
        tau = -1.0 / slope if slope < 0 else np.ptp(x)
        p0 = [sign * np.exp(intercept), tau, offset]
    elif name == "saturation_rate":
        gamma = model.options["gamma_rad"]
        k = max(1, len(y) // 10)
        top = np.mean(np.sort(y)[-k:])
        # first power reaching half of the top-decile rate
        above = np.nonzero(y >= 0.5 * top)[0]
        p_sat = x[above[0]] if above.size else np.median(x)
        p_sat = max(p_sat, _TINY)
        s = x[-1] / p_sat
        eta = 0.5 * gamma * s / (1 + s) / top if top > 0 else 1.0
        p0 = [p_sat, eta]
    elif name in ("orbach", "orbach_raman"):
        delta = model.options["delta_gs"]
        energy = H * delta / K_B
        y_pos = np.clip(y, np.max(y) * 1e-12 + _TINY, None)
        t1, t2 = x[0], x[-1]
        l1, l2 = np.log(y_pos[0]), np.log(y_pos[-1])
        if name == "orbach":
            alpha = (l2 - l1) / (energy * (1 / t1 - 1 / t2))
            alpha = float(np.clip(alpha, 1e-2, 10.0))
            a = np.exp(l1) / bose_factor(t1, delta, alpha)
            p0 = [a, alpha]
        else:
            alpha = model.options["alpha"]
            m = np.array([
                [bose_factor(t1, delta, alpha), t1 ** 7],
                [bose_factor(t2, delta, alpha), t2 ** 7],
            ])
            a, b = np.linalg.solve(m, [y_pos[0], y_pos[-1]])
            if a <= 0:
                a = 0.1 * y_pos[-1] / m[1, 0]
            if b <= 0:
                b = 0.1 * y_pos[0] / m[0, 1]
            p0 = [a, b]
    else:
        raise InvalidInputError(f"no initializer for model {name!r}")
    return model.clip(np.asarray(p0, dtype=float))


# -- Levenberg-Marquardt -----------------------------------------------------


def _jacobian(residual, model, p, r0):
    """Forward-difference Jacobian of the weighted residual vector."""
    n = len(p)
    jac = np.empty((len(r0), n))
    lo, hi = np.asarray(model.lower), np.asarray(model.upper)
    for j in range(n):
        h = FD_REL_STEP * (abs(p[j]) if p[j] != 0 else 1.0)
        if p[j] + h > hi[j]:
            h = -h
        q = p.copy()
        q[j] += h
        if q[j] < lo[j]:
            q[j] = lo[j]
            h = q[j] - p[j]
        jac[:, j] = (residual(q) - r0) / h
    return jac


def fit(
    model: ModelSpec,
    x: Sequence[float],
    y: Sequence[float],
    weights: Sequence[float] | None = None,
    init: Sequence[float] | None = None,
    *,
    max_iter: int = 500,
    ftol: float = 1e-10,
    xtol: float = 1e-10,
    gtol: float = 1e-10,
) -> FitResult:
    """Weighted nonlinear least squares by Levenberg-Marquardt.

    Minimizes ``sum((weights * (model(p, x) - y))**2)``. Only steps that do
    not increase this quantity are accepted. Iteration stops when the
    relative decrease of the residual norm or the relative parameter step
    falls below its tolerance, or after ``max_iter`` iterations (then
    ``converged`` is False and the best point so far is returned).

    Raises
    ------
    RankDeficientError
        If a parameter does not influence the residuals at the start point
        or the damped normal equations are singular.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if not (len(x) == len(y) == len(w)):
        raise InvalidInputError("x, y and weights must have equal length")
    if len(x) < model.n_params:
        raise InvalidInputError(
            f"{len(x)} data points cannot constrain {model.n_params} parameters"
        )
    if init is None:
        p = profile_initializer(model, x, y)
    else:
        p = np.asarray(init, dtype=float)
        if np.any(p < np.asarray(model.lower)) or np.any(p > np.asarray(model.upper)):
            raise InvalidInputError("initial parameters outside bounds")
        p = p.copy()

    def residual(q):
        return w * (model.evaluate(q, x) - y)

    r = residual(p)
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("model is not finite at the initial parameters")
    cost = float(r @ r)
    jac = _jacobian(residual, model, p, r)
    col_norm = np.linalg.norm(jac, axis=0)
    if np.any(col_norm == 0) or not np.all(np.isfinite(jac)):
        bad = [model.param_names[j] for j in np.nonzero(~(col_norm > 0))[0]]
        raise RankDeficientError(f"residuals do not depend on {bad}")

    history = [float(np.sqrt(cost))]
    lam = 1e-3
    scale = col_norm ** 2
    converged = False
    message = "iteration limit reached"
    it = 0
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        if cost == 0 or np.max(np.abs(g) / (col_norm * np.sqrt(cost) + _TINY)) < gtol:
            converged, message = True, "gradient below tolerance"
            break
        a = jac.T @ jac
        scale = np.maximum(scale, np.diag(a))
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(a + lam * np.diag(scale), -g)
            except np.linalg.LinAlgError as exc:
                raise RankDeficientError("singular damped normal equations") from exc
            p_new = model.clip(p + step)
            r_new = residual(p_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        lam = max(lam / 10.0, 1e-15)
        rel_decrease = (cost - cost_new) / cost
        rel_step = np.max(np.abs(p_new - p) / (np.abs(p) + _TINY))
        p, r, cost = p_new, r_new, cost_new
        history.append(float(np.sqrt(cost)))
        if rel_decrease < ftol:
            converged, message = True, "relative decrease below tolerance"
            break
        if rel_step < xtol:
            converged, message = True, "parameter step below tolerance"
            break
        jac = _jacobian(residual, model, p, r)
        col_norm = np.linalg.norm(jac, axis=0)

    jac = _jacobian(residual, model, p, r)
    dof = len(x) - model.n_params
    s2 = cost / dof if dof > 0 else 1.0
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
        sigma = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        sigma = np.full(model.n_params, np.inf)
    return FitResult(
        model=model.name,
        param_names=model.param_names,
        params=p,
        sigma=sigma,
        residual_norm=float(np.sqrt(cost)),
        converged=converged,
        n_iterations=it,
        message=message,
        history=history,
    )

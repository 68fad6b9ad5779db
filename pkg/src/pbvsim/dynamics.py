"""
Classical rate equations of the four-level spin-photon system.

Levels are ordered ``(g_down, g_up, e_down, e_up)``: ground sublevels
|1> (down) and |2> (up) and the spin-down-like (A) and spin-up-like (B)
excited sublevels. Populations evolve as ``dp/dt = M p`` with a generator
``M`` whose columns sum to zero; evolution uses the matrix exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm, null_space

from .constants import H, K_B, LINEWIDTH_FWHM
from .emitter import (
    TRANSITION_LEVELS,
    TransitionTable,
    branching_ratio,
)
from .errors import InvalidInputError
from .fitting import bose_factor, fit, mono_exponential

LEVELS = ("g_down", "g_up", "e_down", "e_up")
G_DOWN, G_UP, E_DOWN, E_UP = range(4)
TARGETS = ("A1", "B2", "repump_532", "idle")
PROBE_WINDOW = 10e-6


@dataclass(frozen=True)
class PulseSegment:
    target: str
    power: float
    duration: float

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InvalidInputError(f"unknown pulse target {self.target!r}")
        if not self.duration > 0:
            raise InvalidInputError("pulse duration must be positive")
        if self.power < 0:
            raise InvalidInputError("pulse power must be nonnegative")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple
    n_repeats: int = 1

    def __post_init__(self):
        if not self.segments:
            raise InvalidInputError("pulse sequence is empty")
        if self.n_repeats < 1:
            raise InvalidInputError("n_repeats must be positive")
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class TemperatureModel:
    """Spin-lattice relaxation ``a_orbach * n(alpha) + a_raman * T**7``.

    ``a_orbach`` multiplies the dimensionless Bose factor with the cube of
    the splitting already folded in, so it carries units of 1/s.
    """

    a_orbach: float
    alpha: float
    a_raman: float
    delta_gs: float

    def __post_init__(self):
        if self.a_orbach < 0 or self.a_raman < 0:
            raise InvalidInputError("relaxation prefactors must be nonnegative")
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")


def pump_rate_from_power(power, p_sat, gamma_rad):
    """Saturating scattering rate ``(G/2) s/(1+s)`` with ``s = P/p_sat``."""
    if not p_sat > 0:
        raise InvalidInputError("p_sat must be positive")
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise InvalidInputError("power must be nonnegative")
    if np.ndim(power) == 0 and math.isinf(power):
        return 0.5 * gamma_rad
    s = power / p_sat
    return 0.5 * gamma_rad * s / (1.0 + s)


def initialization_rate(power, p_sat, gamma_rad, eta):
    if not eta > 0:
        raise InvalidInputError("eta must be positive")
    return pump_rate_from_power(power, p_sat, gamma_rad) / eta


def spin_flip_rate(temperature, model: TemperatureModel):
    """Total ground spin relaxation rate ``1/T1`` at ``temperature`` (K)."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0):
        raise InvalidInputError("temperature must be positive")
    return (model.a_orbach * bose_factor(t, model.delta_gs, model.alpha)
            + model.a_raman * t ** 7)


def thermal_flip_rates(total_rate, qubit_freq, temperature):
    """Split ``1/T1`` into (up, down) rates obeying detailed balance."""
    boltz = math.exp(-H * abs(qubit_freq) / (K_B * temperature))
    down = total_rate / (1.0 + boltz)
    return down * boltz, down


@dataclass(frozen=True)
class RateModel:
    """Rates of the driven four-level system.

    Laser drive on a transition ``k`` detuned by ``delta_k`` from the laser
    has stimulated rate ``W = G s_k / (2 (1 + (2 delta_k / lw)**2))`` with
    ``s_k = (P / p_sat) * strength_k / strength_locked``, which reproduces
    the two-level steady-state scattering rate exactly.
    """

    table: TransitionTable
    gamma_rad: float
    eta: float
    p_sat: float = 3.1e-9
    linewidth_fwhm: float = LINEWIDTH_FWHM
    gamma_flip_up: float = 0.0
    gamma_flip_down: float = 0.0
    detection_efficiency: float = 1e-2

    @classmethod
    def from_table(cls, table: TransitionTable, gamma_rad: float, **kw):
        return cls(table=table, gamma_rad=gamma_rad, eta=branching_ratio(table), **kw)

    def at_temperature(self, temperature, tmodel: TemperatureModel | None):
        if tmodel is None:
            return replace(self, gamma_flip_up=0.0, gamma_flip_down=0.0)
        total = float(spin_flip_rate(temperature, tmodel))
        up, down = thermal_flip_rates(total, self.table.qubit_freq, temperature)
        return replace(self, gamma_flip_up=up, gamma_flip_down=down)

    def drive_rates(self, target: str, power: float) -> dict:
        """Stimulated rate on each transition for a laser locked to ``target``."""
        if target not in ("A1", "B2") or power == 0:
            return {lab: 0.0 for lab in TRANSITION_LEVELS}
        locked = self.table[target]
        s0 = power / self.p_sat
        out = {}
        for e in self.table.entries:
            detune = e.frequency - locked.frequency
            s = s0 * e.relative_strength / locked.relative_strength
            out[e.label] = 0.5 * self.gamma_rad * s / (1 + (2 * detune / self.linewidth_fwhm) ** 2)
        return out

    def generator(self, target: str = "idle", power: float = 0.0) -> np.ndarray:
        """4x4 generator ``M`` (columns sum to zero)."""
        m = np.zeros((4, 4))

        def rate(src, dst, k):
            m[dst, src] += k
            m[src, src] -= k

        if math.isinf(self.eta):
            cons, flip = self.gamma_rad, 0.0
        else:
            cons = self.gamma_rad * self.eta / (self.eta + 1)
            flip = self.gamma_rad / (self.eta + 1)
        rate(E_DOWN, G_DOWN, cons)
        rate(E_DOWN, G_UP, flip)
        rate(E_UP, G_UP, cons)
        rate(E_UP, G_DOWN, flip)
        rate(G_DOWN, G_UP, self.gamma_flip_up)
        rate(G_UP, G_DOWN, self.gamma_flip_down)
        for lab, w in self.drive_rates(target, power).items():
            gi, ei = TRANSITION_LEVELS[lab]
            if w:
                rate(gi, 2 + ei, w)
                rate(2 + ei, gi, w)
        return m

    def fluorescence(self, pops) -> np.ndarray:
        """Detected photon rate for populations of shape (..., 4)."""
        pops = np.asarray(pops)
        return self.detection_efficiency * self.gamma_rad * (pops[..., E_DOWN] + pops[..., E_UP])


def _check_generator(m, p0=None):
    m = np.asarray(m, dtype=float)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError("generator must be square")
    scale = max(np.max(np.abs(m)), 1.0)
    if np.max(np.abs(m.sum(axis=0))) > 1e-9 * scale:
        raise InvalidInputError("generator columns must sum to zero")
    if p0 is not None:
        p0 = np.asarray(p0, dtype=float)
        if np.any(p0 < -1e-12) or abs(p0.sum() - 1) > 1e-9:
            raise InvalidInputError("p0 must be a probability vector")
    return m


def evolve_populations(rate_matrix, p0, times) -> np.ndarray:
    """Solve ``dp/dt = M p``; returns an array of shape ``(len(times), n)``."""
    m = _check_generator(rate_matrix, p0)
    p0 = np.asarray(p0, dtype=float)
    return np.array([expm(m * t) @ p0 for t in np.asarray(times, dtype=float)])


def integrated_populations(rate_matrix, p0, edges) -> np.ndarray:
    """``int p(t) dt`` over each interval between consecutive ``edges``.

    Uses the augmented generator ``[[M, 0], [I, 0]]`` whose lower block
    accumulates the time integral exactly.
    """
    m = _check_generator(rate_matrix, p0)
    n = m.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = m
    aug[n:, :n] = np.eye(n)
    start = np.concatenate([np.asarray(p0, dtype=float), np.zeros(n)])
    cum = np.array([(expm(aug * t) @ start)[n:] for t in np.asarray(edges, dtype=float)])
    return np.diff(cum, axis=0)


def steady_state_populations(rate_matrix) -> np.ndarray:
    """Kernel of the generator, normalized to a probability vector.

    Columns are scaled by their outflow rate first so that slow spin flips
    keep full relative precision next to optical rates.
    """
    m = _check_generator(rate_matrix)
    out = -np.diag(m)
    d = np.where(out > 0, 1.0 / np.where(out > 0, out, 1.0), 1.0)
    k = null_space(m * d[None, :])
    if k.shape[1] != 1:
        raise InvalidInputError("generator has no unique steady state")
    v = k[:, 0] * d
    v = np.clip(v / v.sum(), 0.0, None)
    return v / v.sum()


def limit_populations(rate_matrix, p0) -> np.ndarray:
    """``p(t -> inf)`` from ``p0``; also defined when the kernel is degenerate."""
    m = _check_generator(rate_matrix, p0)
    try:
        return steady_state_populations(m)
    except InvalidInputError:
        pass
    rates = np.abs(np.linalg.eigvals(m).real)
    scale = max(rates.max(), 1e-300)
    slow = rates[rates > 1e-12 * scale]
    p0 = np.asarray(p0, dtype=float)
    if slow.size == 0:
        return p0.copy()
    p = expm(m * 50.0 / slow.min()) @ p0
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def relaxed_ground(model: RateModel, pops) -> np.ndarray:
    """Ground populations after the laser is off and the excited state has decayed."""
    pops = np.asarray(pops, dtype=float)
    if math.isinf(model.eta):
        keep, flip = 1.0, 0.0
    else:
        keep, flip = model.eta / (model.eta + 1), 1.0 / (model.eta + 1)
    down = pops[G_DOWN] + keep * pops[E_DOWN] + flip * pops[E_UP]
    up = pops[G_UP] + keep * pops[E_UP] + flip * pops[E_DOWN]
    return np.array([down, up])


def initialization_fidelity(model: RateModel, power: float, target: str = "B2",
                            p0=(0.5, 0.5, 0.0, 0.0)) -> float:
    """Long-pulse population of the pumped-into spin sublevel after relaxation."""
    ss = limit_populations(model.generator(target, power), p0)
    g = relaxed_ground(model, ss)
    return float(g[_target_ground(target)] / g.sum())


def _target_ground(target):
    # B2 pumps population into |1> (down); A1 into |2> (up)
    return G_DOWN if target == "B2" else G_UP


@dataclass
class InitResult:
    times: np.ndarray
    counts: np.ndarray
    fidelity: float
    contrast_fidelity: float
    steady_state: np.ndarray = field(repr=False, default=None)


def quasi_static_fluorescence(model: RateModel, target, power, ground_pops):
    """Fluorescence right after switch-on, ground populations frozen."""
    w = model.drive_rates(target, power)
    pe = []
    for ei in (0, 1):
        up = sum(w[lab] * ground_pops[TRANSITION_LEVELS[lab][0]]
                 for lab in w if TRANSITION_LEVELS[lab][1] == ei)
        out = model.gamma_rad + sum(w[lab] for lab in w if TRANSITION_LEVELS[lab][1] == ei)
        pe.append(up / out)
    return model.detection_efficiency * model.gamma_rad * sum(pe)


def simulate_initialization(model: RateModel, power: float, duration: float,
                            time_bin: float, target: str = "B2") -> InitResult:
    """Optical pumping from balanced ground populations.

    Returns the binned fluorescence trace (counts per bin), the population
    of the pumped-into sublevel once the pulse is over and the excited state
    has decayed (see :func:`initialization_fidelity`), and separately the
    fluorescence-contrast fidelity
    ``1 - I(ss) / I(0+)``.
    """
    p0 = np.array([0.5, 0.5, 0.0, 0.0])
    m = model.generator(target, power)
    n_bins = int(round(duration / time_bin))
    if n_bins < 1:
        raise InvalidInputError("duration shorter than one time bin")
    edges = np.arange(n_bins + 1) * time_bin
    counts = model.fluorescence(integrated_populations(m, p0, edges))
    ss = limit_populations(m, p0)
    fidelity = initialization_fidelity(model, power, target, p0)
    i0 = quasi_static_fluorescence(model, target, power, p0[:2])
    i_ss = float(model.fluorescence(ss))
    contrast = 1.0 - i_ss / i0 if i0 > 0 else 0.0
    return InitResult(0.5 * (edges[1:] + edges[:-1]), counts, float(fidelity),
                      float(contrast), ss)


def pumping_rate(model: RateModel, target: str, power: float) -> float:
    """Slowest relaxation rate of the driven generator (the mono-exponential rate)."""
    ev = np.linalg.eigvals(model.generator(target, power))
    ev = np.sort(np.abs(ev.real))
    return float(ev[1])


def simulate_t1_sequence(model: RateModel, delays, temperature: float,
                         tmodel: TemperatureModel, init_power: float,
                         init_duration: float = 150e-6,
                         probe_window: float = PROBE_WINDOW,
                         probe_power: float | None = None) -> np.ndarray:
    """Detected counts of the B2 probe after each dark delay.

    Sequence: balanced reset, B2 initialization, dark delay with thermal
    spin flips, then a ``probe_window`` B2 probe whose integrated
    fluorescence is returned.
    """
    mt = model.at_temperature(temperature, tmodel)
    probe_power = init_power if probe_power is None else probe_power
    p = np.array([0.5, 0.5, 0.0, 0.0])
    p = expm(mt.generator("B2", init_power) * init_duration) @ p
    dark = mt.generator()
    probe = mt.generator("B2", probe_power)
    out = []
    for d in np.asarray(delays, dtype=float):
        if d < 0:
            raise InvalidInputError("delays must be nonnegative")
        pd = expm(dark * d) @ p
        integ = integrated_populations(probe, pd / pd.sum(), [0.0, probe_window])[0]
        out.append(float(mt.fluorescence(integ)))
    return np.array(out)


def fit_t1(delays, counts):
    """Mono-exponential fit of a recovery curve; returns (t1, FitResult)."""
    res = fit(mono_exponential(), delays, counts)
    return res["tau"], res


def t1_model_value(temperature, tmodel: TemperatureModel) -> float:
    return 1.0 / float(spin_flip_rate(temperature, tmodel))


def saturation_series(model: RateModel, powers, target="B2") -> np.ndarray:
    """Initialization (pumping) rate at each power."""
    return np.array([pumping_rate(model, target, p) for p in powers])


def simulate_sequence(model: RateModel, sequence: PulseSequence, p0=None):
    """Run a pulse sequence ``n_repeats`` times.

    A ``repump_532`` segment resets the ground doublet to balanced
    populations at its end. Returns the detected counts of every segment,
    shape ``(n_repeats, n_segments)``, and the final populations.
    """
    p = np.array([0.5, 0.5, 0.0, 0.0]) if p0 is None else np.asarray(p0, dtype=float)
    _check_generator(np.zeros((4, 4)), p)
    counts = np.zeros((sequence.n_repeats, len(sequence.segments)))
    gens = []
    for seg in sequence.segments:
        if seg.target in ("A1", "B2"):
            gens.append(model.generator(seg.target, seg.power))
        else:
            gens.append(model.generator())
    for r in range(sequence.n_repeats):
        for k, (seg, m) in enumerate(zip(sequence.segments, gens)):
            if seg.target == "repump_532":
                p = np.array([0.5, 0.5, 0.0, 0.0])
                continue
            if seg.target != "idle":
                integ = integrated_populations(m, p, [0.0, seg.duration])[0]
                counts[r, k] = float(model.fluorescence(integ))
            p = expm(m * seg.duration) @ p
            p = np.clip(p, 0.0, None)
            p /= p.sum()
    return counts, p

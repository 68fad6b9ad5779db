"""
Lambda-system Lindblad model for coherent population trapping.

Basis order is ``(|down>, |up>, |e>)``. The pump drives |up>-|e> (B2), the
probe drives |down>-|e> (B1) at ``pump + raman_offset``; two-photon
resonance is ``raman_offset == qubit_freq``. Density matrices are
vectorized column-major, so ``vec(A rho B) = kron(B.T, A) vec(rho)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .errors import (
    DegenerateSteadyStateError,
    ExtrapolationError,
    FitFailedError,
    InvalidInputError,
)
from .fitting import dip_lorentzian, fit, lorentzian

DOWN, UP, EXC = range(3)
KERNEL_TOL = 1e-12


@dataclass(frozen=True)
class LambdaSystem:
    """Drive and relaxation parameters of the three-level system.

    Rabi frequencies and ``delta_pump`` are angular (rad/s); ``raman_offset``
    and ``qubit_freq`` are in Hz; the remaining rates are in 1/s.
    ``gamma_dephasing`` is the decay rate of the ground coherence caused by
    pure dephasing; ``gamma_spin`` is the ground population relaxation
    rate ``1/T1``.
    """

    omega_pump: float = 0.0
    omega_probe: float = 0.0
    delta_pump: float = 0.0
    raman_offset: float = 0.0
    qubit_freq: float = 0.0
    gamma_rad: float = 0.0
    branch_down: float = 0.5
    branch_up: float = 0.5
    gamma_dephasing: float = 0.0
    gamma_spin: float = 0.0

    def __post_init__(self):
        if abs(self.branch_down + self.branch_up - 1.0) > 1e-12:
            raise InvalidInputError("branching fractions must sum to 1")
        for name in ("gamma_rad", "gamma_dephasing", "gamma_spin", "branch_down", "branch_up"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")

    @property
    def two_photon_detuning(self) -> float:
        return self.raman_offset - self.qubit_freq


def _ket(i):
    v = np.zeros((3, 1), dtype=complex)
    v[i] = 1
    return v


def _op(i, j):
    return _ket(i) @ _ket(j).T


def hamiltonian(sys: LambdaSystem) -> np.ndarray:
    """Rotating-frame Hamiltonian in rad/s."""
    d_probe = sys.delta_pump + 2 * math.pi * sys.two_photon_detuning
    h = sys.delta_pump * _op(UP, UP) + d_probe * _op(DOWN, DOWN)
    h = h + 0.5 * sys.omega_pump * (_op(UP, EXC) + _op(EXC, UP))
    h = h + 0.5 * sys.omega_probe * (_op(DOWN, EXC) + _op(EXC, DOWN))
    return h


def jump_operators(sys: LambdaSystem):
    """Collapse operators with the rate folded into the amplitude."""
    sz = _op(UP, UP) - _op(DOWN, DOWN)
    return [
        math.sqrt(sys.gamma_rad * sys.branch_down) * _op(DOWN, EXC),
        math.sqrt(sys.gamma_rad * sys.branch_up) * _op(UP, EXC),
        # coherence decays at 2 * (gamma / 2)
        math.sqrt(sys.gamma_dephasing / 2) * sz,
        math.sqrt(sys.gamma_spin / 2) * _op(UP, DOWN),
        math.sqrt(sys.gamma_spin / 2) * _op(DOWN, UP),
    ]


def vec(rho) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v) -> np.ndarray:
    n = int(round(math.sqrt(len(v))))
    return np.asarray(v).reshape((n, n), order="F")


def build_liouvillian(sys: LambdaSystem) -> np.ndarray:
    """9x9 generator of ``d vec(rho)/dt``."""
    h = hamiltonian(sys)
    eye = np.eye(3)
    lv = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for j in jump_operators(sys):
        jdj = j.conj().T @ j
        lv += np.kron(j.conj(), j) - 0.5 * np.kron(eye, jdj) - 0.5 * np.kron(jdj.T, eye)
    return lv


def kernel_dimension(lv, tol=KERNEL_TOL) -> int:
    s = np.linalg.svd(lv, compute_uv=False)
    if s[0] == 0:
        return len(s)
    return int(np.sum(s < tol * s[0]))


def steady_state(lv) -> np.ndarray:
    """Unique steady state of a Liouvillian via a bordered linear solve.

    The equation for ``rho[0, 0]`` is replaced by the trace constraint.

    Raises
    ------
    DegenerateSteadyStateError
        If the kernel of ``lv`` is not one-dimensional.
    """
    lv = np.asarray(lv, dtype=complex)
    n = int(round(math.sqrt(lv.shape[0])))
    dim = kernel_dimension(lv)
    if dim != 1:
        raise DegenerateSteadyStateError(f"kernel dimension {dim}, expected 1")
    a = lv.copy()
    b = np.zeros(n * n, dtype=complex)
    a[0, :] = 0
    a[0, [k * (n + 1) for k in range(n)]] = 1
    b[0] = 1
    rho = unvec(np.linalg.solve(a, b))
    return 0.5 * (rho + rho.conj().T)


def propagate(lv, rho0, t) -> np.ndarray:
    return unvec(expm(np.asarray(lv) * t) @ vec(rho0))


def excited_population(rho) -> float:
    return float(np.real(rho[EXC, EXC]))


def cpt_spectrum(sys: LambdaSystem, raman_grid) -> np.ndarray:
    """Steady-state fluorescence ``gamma_rad * rho_ee`` at each Raman offset."""
    out = []
    for r in np.asarray(raman_grid, dtype=float):
        rho = steady_state(build_liouvillian(replace(sys, raman_offset=float(r))))
        out.append(sys.gamma_rad * excited_population(rho))
    return np.array(out)


@dataclass(frozen=True)
class RabiCalibration:
    """Total laser power to (pump, probe) Rabi frequencies.

    Each beam carries ``pump_fraction`` / ``1 - pump_fraction`` of the total
    power and ``omega = sqrt(P_beam / p_sat) * gamma_rad / sqrt(2)`` on the
    pump leg. The probe leg is scaled by ``sqrt(probe_strength_ratio)``,
    the relative dipole strength of the probe transition.
    """

    p_sat: float
    gamma_rad: float
    probe_strength_ratio: float = 1.0
    pump_fraction: float = 0.5

    def __call__(self, power):
        if not power > 0:
            raise InvalidInputError("power must be positive")
        pump = power_to_rabi(self.pump_fraction * power, self.p_sat, self.gamma_rad)
        probe = power_to_rabi((1 - self.pump_fraction) * power, self.p_sat, self.gamma_rad)
        return pump, probe * math.sqrt(self.probe_strength_ratio)


def power_to_rabi(power, p_sat, gamma_rad):
    return math.sqrt(power / p_sat) * gamma_rad / math.sqrt(2)


def weak_drive_fwhm(sys: LambdaSystem) -> float:
    """Dip FWHM (Hz) in the zero-power limit: ground coherence decay over pi."""
    return (sys.gamma_dephasing + 0.5 * sys.gamma_spin) / math.pi


def estimate_dip_fwhm(sys: LambdaSystem) -> float:
    """Rough power-broadened dip width (Hz) used to size scan windows."""
    broad = (sys.omega_pump ** 2 + sys.omega_probe ** 2) / max(sys.gamma_rad, 1e-300)
    return weak_drive_fwhm(sys) + broad / math.pi


def fit_dip(raman_grid, spectrum):
    """Inverted Lorentzian on a flat background."""
    return fit(dip_lorentzian(), raman_grid, spectrum)


@dataclass
class DipMeasurement:
    grid: np.ndarray
    spectrum: np.ndarray
    normalized: np.ndarray
    envelope: object
    dip: object

    @property
    def fwhm(self) -> float:
        return abs(self.dip["fwhm"])


def measure_dip(sys: LambdaSystem, n_points: int = 81, core_widths: float = 3.0,
                wing_widths: float = 8.0, n_wing: int = 15) -> DipMeasurement:
    """Sample and fit the CPT dip of ``sys``.

    The dip sits on the optical line of the probe leg. That envelope is
    fitted with a Lorentzian on wing points beyond ``wing_widths`` estimated
    dip widths and divided out; the normalized core within ``core_widths``
    is then fitted with an inverted Lorentzian on a flat background.
    """
    w = estimate_dip_fwhm(sys)
    reach = max(sys.gamma_rad / math.pi, 3 * wing_widths * w)
    f0 = sys.qubit_freq
    wings = f0 + np.r_[np.linspace(-reach, -wing_widths * w, n_wing),
                       np.linspace(wing_widths * w, reach, n_wing)]
    envelope = fit(lorentzian(), wings, cpt_spectrum(sys, wings))
    grid = f0 + np.linspace(-core_widths * w, core_widths * w, n_points)
    spec = cpt_spectrum(sys, grid)
    normalized = spec / lorentzian()(envelope.params, grid)
    dip = fit_dip(grid, normalized)
    return DipMeasurement(grid, spec, normalized, envelope, dip)


def _measure_at(sys_template, power, power_to_rabi_cal, n_points):
    op, oq = power_to_rabi_cal(power)
    sys = replace(sys_template, omega_pump=op, omega_probe=oq)
    try:
        m = measure_dip(sys, n_points=n_points)
    except Exception as exc:
        raise FitFailedError(f"dip fit failed at P={power!r} W: {exc}", power=power) from exc
    if not (m.dip.converged and m.envelope.converged):
        raise FitFailedError(f"dip fit did not converge at P={power!r} W", power=power)
    return m


def measure_series(sys_template: LambdaSystem, powers, power_to_rabi_cal,
                   n_points: int = 81, workers: int = 1):
    """:func:`measure_dip` at each total power, in input order.

    Raises
    ------
    FitFailedError
        If a fit fails or does not converge; carries the offending power.
    """
    def one(p):
        return _measure_at(sys_template, float(p), power_to_rabi_cal, n_points)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, powers))
    return [one(p) for p in powers]


def linewidth_vs_power(sys_template: LambdaSystem, powers, power_to_rabi_cal,
                       n_points: int = 81, workers: int = 1):
    """``(power, fitted dip FWHM in Hz)`` pairs, see :func:`measure_series`."""
    ms = measure_series(sys_template, powers, power_to_rabi_cal, n_points, workers)
    return [(float(p), m.fwhm) for p, m in zip(powers, ms)]


def extract_t2star(series, weights=None):
    """Linear zero-power extrapolation of the dip width.

    Returns
    -------
    t2star : float
        ``1 / (pi * b)`` with ``b`` the zero-power intercept, s.
    zero_power_fwhm : float
        ``b`` in Hz.
    """
    pts = np.asarray(series, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise InvalidInputError("need at least three (power, fwhm) points")
    if len(np.unique(pts[:, 0])) != len(pts):
        raise InvalidInputError("powers must be distinct")
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float)
    a = np.column_stack([pts[:, 0], np.ones(len(pts))]) * w[:, None]
    coef, *_ = np.linalg.lstsq(a, pts[:, 1] * w, rcond=None)
    b = float(coef[1])
    if b <= 0:
        raise ExtrapolationError(f"zero-power intercept {b:.4g} Hz is not positive")
    return 1.0 / (math.pi * b), b

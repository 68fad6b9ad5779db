"""
Effective Hamiltonians of the ground and excited Kramers-doublet manifolds.

Each manifold lives in the product basis ``{e+up, e+down, e-up, e-down}``
(orbital x spin). The Hamiltonian is the sum of a spin-orbit term, a spin
Zeeman term, an orbital Zeeman term along the defect axis and a transverse
strain coupling between the two orbitals. All energies are in Hz and all
fields in tesla.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .constants import DELTA_GS, LINEWIDTH_FWHM, MU_B_HZ_PER_T, ZPL_FREQ
from .errors import InvalidInputError

FULLY_CYCLING = math.inf
LABELS = ("A1", "A2", "B1", "B2")
SPIN_CONSERVING = {"A1": True, "A2": False, "B1": False, "B2": True}
# (ground sublevel, excited sublevel); ground 1 = spin down, 2 = spin up;
# excited A = spin down like, B = spin up like
TRANSITION_LEVELS = {"A1": (0, 0), "A2": (1, 0), "B1": (0, 1), "B2": (1, 1)}

_SX = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
_SY = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
_LZ = np.array([[1, 0], [0, -1]], dtype=complex)
_LX = np.array([[0, 1], [1, 0]], dtype=complex)
_I2 = np.eye(2, dtype=complex)

S_AXIS = np.kron(_I2, _SZ)
# numerical floor for transition overlaps; below it a channel is closed
_OVERLAP_FLOOR = 1e-24


@dataclass(frozen=True)
class EmitterParams:
    """Static constants of one emitter.

    ``delta_es``, ``f_orb_*`` and ``strain_*`` are calibration parameters;
    the defaults are placeholders overwritten by the shipped calibration.
    """

    delta_gs: float = DELTA_GS
    delta_es: float = 2.0e12
    zpl_freq: float = ZPL_FREQ
    gamma_rad: float = 2 * math.pi * LINEWIDTH_FWHM
    g_spin: float = 2 * MU_B_HZ_PER_T
    f_orb_gs: float = 0.1
    f_orb_es: float = 0.3
    strain_gs: float = 0.0
    strain_es: float = 2.0e11

    def __post_init__(self):
        if not self.delta_gs > 0 or not self.delta_es > 0:
            raise InvalidInputError("zero-field splittings must be positive")
        if not self.gamma_rad > 0:
            raise InvalidInputError("gamma_rad must be positive")
        for name in ("f_orb_gs", "f_orb_es"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "EmitterParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown emitter keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    def splitting(self, manifold: str) -> float:
        return self.delta_gs if manifold == "ground" else self.delta_es

    def zero_field_lower_energy(self, manifold: str) -> float:
        """Energy of the lower Kramers doublet at zero field."""
        d = 0.5 * self.splitting(manifold)
        s = self.strain_gs if manifold == "ground" else self.strain_es
        return -math.hypot(d, s)


@dataclass(frozen=True)
class FieldConfig:
    """Magnetic field in the crystal frame and the defect symmetry axis."""

    b_crystal: tuple = (0.0, 0.0, 0.0)
    defect_axis: tuple = tuple(np.ones(3) / np.sqrt(3))

    def __post_init__(self):
        b = np.asarray(self.b_crystal, dtype=float)
        a = np.asarray(self.defect_axis, dtype=float)
        if b.shape != (3,) or a.shape != (3,):
            raise InvalidInputError("field and axis must be 3-vectors")
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise InvalidInputError(f"defect axis {a} is not a unit vector")
        object.__setattr__(self, "b_crystal", tuple(float(v) for v in b))
        object.__setattr__(self, "defect_axis", tuple(float(v) for v in a))

    @classmethod
    def along(cls, magnitude: float, direction=(0, 0, 1), defect_axis=None):
        d = np.asarray(direction, dtype=float)
        b = magnitude * d / np.linalg.norm(d)
        if defect_axis is None:
            return cls(tuple(b))
        return cls(tuple(b), tuple(defect_axis))


def rotate_field_to_defect_frame(field: FieldConfig):
    """Split the field into components along and across the defect axis.

    Returns
    -------
    b_parallel, b_perp : float
        Signed projection on the axis and the magnitude of the remainder.
    """
    b = np.asarray(field.b_crystal)
    axis = np.asarray(field.defect_axis)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
        raise InvalidInputError("defect axis is not a unit vector")
    b_par = float(b @ axis)
    b_perp = float(np.linalg.norm(b - b_par * axis))
    return b_par, b_perp


def build_manifold_hamiltonian(params: EmitterParams, manifold: str, field: FieldConfig):
    """4x4 Hamiltonian (Hz) of the ``"ground"`` or ``"excited"`` manifold.

    The field is expressed in the defect frame with ``z`` along the axis and
    ``x`` along the transverse component.
    """
    if manifold not in ("ground", "excited"):
        raise InvalidInputError(f"unknown manifold {manifold!r}")
    b_par, b_perp = rotate_field_to_defect_frame(field)
    if manifold == "ground":
        delta, f_orb, strain = params.delta_gs, params.f_orb_gs, params.strain_gs
    else:
        delta, f_orb, strain = params.delta_es, params.f_orb_es, params.strain_es
    g = params.g_spin
    h = -0.5 * delta * np.kron(_LZ, 2 * _SZ)
    h = h + g * (b_par * np.kron(_I2, _SZ) + b_perp * np.kron(_I2, _SX))
    h = h + f_orb * g * b_par * np.kron(_LZ, _I2)
    h = h + strain * np.kron(_LX, _I2)
    return 0.5 * (h + h.conj().T)


@dataclass(frozen=True)
class ManifoldEigensystem:
    """Eigenpairs of one manifold; ``states[:, k]`` belongs to ``energies[k]``."""

    energies: np.ndarray
    states: np.ndarray
    spin_projection: np.ndarray

    def lower_doublet(self):
        """Indices of the lower doublet ordered (spin-down-like, spin-up-like).

        The Zeeman-lower partner is the spin-down-like one. Exact
        degeneracies are already ordered by spin projection.
        """
        return [0, 1]


def eigensystem(h) -> ManifoldEigensystem:
    """Diagonalize a 4x4 Hermitian matrix.

    Within (near-)degenerate eigenvalue clusters the basis is rotated to
    diagonalize the spin projection along the defect axis, so Kramers
    partners at zero field come out as spin eigenstates.
    """
    h = np.asarray(h, dtype=complex)
    scale = max(np.max(np.abs(h)), 1e-300)
    if np.max(np.abs(h - h.conj().T)) > 1e-9 * scale:
        raise InvalidInputError("matrix is not Hermitian")
    h = 0.5 * (h + h.conj().T)
    energies, vecs = np.linalg.eigh(h)
    tol = 1e-10 * scale
    k = 0
    n = len(energies)
    while k < n:
        m = k + 1
        while m < n and energies[m] - energies[k] <= tol:
            m += 1
        if m - k > 1:
            sub = vecs[:, k:m]
            sz = sub.conj().T @ S_AXIS @ sub
            w, u = np.linalg.eigh(0.5 * (sz + sz.conj().T))
            vecs[:, k:m] = sub @ u
        k = m
    spin = np.real(np.einsum("ik,ij,jk->k", vecs.conj(), S_AXIS, vecs))
    return ManifoldEigensystem(energies, vecs, spin)


@dataclass(frozen=True)
class Transition:
    label: str
    frequency: float
    relative_strength: float
    spin_conserving: bool


@dataclass(frozen=True)
class TransitionTable:
    """The A1/A2/B1/B2 transitions plus the zero-field C and D lines."""

    entries: tuple
    zero_field: tuple
    ground_energies: tuple = (0.0, 0.0)
    excited_energies: tuple = (0.0, 0.0)

    def __getitem__(self, label) -> Transition:
        for e in self.entries:
            if e.label == label:
                return e
        raise KeyError(label)

    @property
    def qubit_freq(self) -> float:
        """Splitting between ground sublevels 2 (up) and 1 (down), Hz."""
        return self.ground_energies[1] - self.ground_energies[0]

    @property
    def spin_conserving_splitting(self) -> float:
        return abs(self["A1"].frequency - self["B2"].frequency)


def transition_table(gs: ManifoldEigensystem, es: ManifoldEigensystem,
                     params: EmitterParams) -> TransitionTable:
    """Frequencies and spin-overlap strengths of the four C-line transitions.

    Strengths are ``|<e|g>|**2`` (the dipole is taken as the identity on
    orbital x spin) normalized so the four sum to 2.
    """
    g_idx = gs.lower_doublet()
    e_idx = es.lower_doublet()
    g_ref = params.zero_field_lower_energy("ground")
    e_ref = params.zero_field_lower_energy("excited")
    raw = {}
    freqs = {}
    for label, (gi, ei) in TRANSITION_LEVELS.items():
        g = gs.states[:, g_idx[gi]]
        e = es.states[:, e_idx[ei]]
        ov = abs(np.vdot(e, g)) ** 2
        raw[label] = ov if ov > _OVERLAP_FLOOR else 0.0
        freqs[label] = (params.zpl_freq + (es.energies[e_idx[ei]] - e_ref)
                        - (gs.energies[g_idx[gi]] - g_ref))
    total = sum(raw.values())
    if total <= 0:
        raise InvalidInputError("no optical overlap between the lower doublets")
    entries = tuple(
        Transition(lab, float(freqs[lab]), 2.0 * raw[lab] / total, SPIN_CONSERVING[lab])
        for lab in LABELS
    )
    c_freq = params.zpl_freq
    return TransitionTable(
        entries,
        (c_freq, c_freq - params.delta_gs),
        tuple(float(gs.energies[i]) for i in g_idx),
        tuple(float(es.energies[i]) for i in e_idx),
    )


def emitter_table(params: EmitterParams, field: FieldConfig) -> TransitionTable:
    """Build both manifolds for ``field`` and return their transition table."""
    gs = eigensystem(build_manifold_hamiltonian(params, "ground", field))
    es = eigensystem(build_manifold_hamiltonian(params, "excited", field))
    return transition_table(gs, es, params)


def branching_ratio(table: TransitionTable) -> float:
    """Spin-conserving over spin-flipping strength; ``FULLY_CYCLING`` if closed."""
    cons = sum(e.relative_strength for e in table.entries if e.spin_conserving)
    flip = sum(e.relative_strength for e in table.entries if not e.spin_conserving)
    if flip == 0:
        return FULLY_CYCLING
    return cons / flip


def lorentzian_profile(freq, center, fwhm):
    """Unit-height Lorentzian."""
    hw = 0.5 * fwhm
    return hw * hw / ((np.asarray(freq, dtype=float) - center) ** 2 + hw * hw)


def ple_spectrum(table: TransitionTable, linewidth_fwhm: float, freq_grid,
                 populations=(0.5, 0.5)) -> np.ndarray:
    """Population- and strength-weighted Lorentzian PLE spectrum.

    ``populations`` are the weights of ground sublevels 1 (down) and 2 (up).
    """
    if not linewidth_fwhm > 0:
        raise InvalidInputError("linewidth must be positive")
    pops = np.asarray(populations, dtype=float)
    if pops.shape != (2,) or np.any(pops < 0) or abs(pops.sum() - 1) > 1e-9:
        raise InvalidInputError("populations must be two nonnegative weights summing to 1")
    grid = np.asarray(freq_grid, dtype=float)
    out = np.zeros_like(grid)
    for e in table.entries:
        gi = TRANSITION_LEVELS[e.label][0]
        weight = pops[gi] * e.relative_strength
        if weight:
            out += weight * lorentzian_profile(grid, e.frequency, linewidth_fwhm)
    return out


def zeeman_slope(params: EmitterParams, fields_tesla, direction=(0, 0, 1)):
    """Spin-conserving splitting versus field magnitude and its linear fit.

    Returns
    -------
    splittings : ndarray
        ``|f(A1) - f(B2)|`` in Hz at each field.
    slope, intercept, r_squared : float
    """
    b = np.asarray(fields_tesla, dtype=float)
    split = np.array([
        emitter_table(params, FieldConfig.along(bi, direction)).spin_conserving_splitting
        for bi in b
    ])
    slope, intercept = np.polyfit(b, split, 1)
    resid = split - (slope * b + intercept)
    ss_tot = np.sum((split - split.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return split, float(slope), float(intercept), float(r2)

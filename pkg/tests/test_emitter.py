import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbvsim import emitter
from pbvsim.emitter import EmitterParams, FieldConfig
from pbvsim.errors import InvalidInputError

AXIS = (1, 1, 1)


def test_zero_field_lines_sit_at_c_and_d(calibration):
    p = calibration.emitter
    table = emitter.emitter_table(p, FieldConfig())
    for e in table.entries:
        assert e.frequency == pytest.approx(p.zpl_freq, abs=1.0)
    c, d = table.zero_field
    assert c == p.zpl_freq
    assert c - d == pytest.approx(3.903e12)


def test_zero_field_is_cycling():
    table = emitter.emitter_table(EmitterParams(), FieldConfig())
    assert emitter.branching_ratio(table) == emitter.FULLY_CYCLING
    assert table["A2"].relative_strength == 0.0


def test_axial_field_closed_form():
    # field along the symmetry axis without strain: spin and orbit are good
    # quantum numbers; the lower doublet splits by g b (1 + 2 f)
    p = EmitterParams(strain_gs=0.0, strain_es=0.0, f_orb_gs=0.2)
    b = 0.5
    table = emitter.emitter_table(p, FieldConfig.along(b, AXIS))
    assert table.qubit_freq == pytest.approx(p.g_spin * b * (1 + 2 * p.f_orb_gs), rel=1e-12)
    assert emitter.branching_ratio(table) == emitter.FULLY_CYCLING


def test_hamiltonian_hermitian_and_spectrum(calibration):
    f = FieldConfig.along(0.22, (0, 0, 1))
    for manifold in ("ground", "excited"):
        h = emitter.build_manifold_hamiltonian(calibration.emitter, manifold, f)
        np.testing.assert_allclose(h, h.conj().T)
        es = emitter.eigensystem(h)
        np.testing.assert_allclose(es.energies, np.linalg.eigvalsh(h), atol=1e-3)
        np.testing.assert_allclose(es.states.conj().T @ es.states, np.eye(4), atol=1e-12)


def test_eigensystem_rejects_non_hermitian():
    with pytest.raises(InvalidInputError):
        emitter.eigensystem(np.triu(np.ones((4, 4))))


def test_field_frame_projection():
    b_par, b_perp = emitter.rotate_field_to_defect_frame(FieldConfig.along(1.0, (0, 0, 1)))
    assert b_par == pytest.approx(1 / math.sqrt(3))
    assert b_perp == pytest.approx(math.sqrt(2 / 3))
    with pytest.raises(InvalidInputError):
        FieldConfig((0, 0, 1), (1, 1, 1))


def test_calibrated_values_at_220_mT(calibration):
    table = calibration.table()
    assert table.qubit_freq == pytest.approx(4.24e9, rel=1e-6)
    assert emitter.branching_ratio(table) == pytest.approx(87, rel=1e-6)
    assert table["A1"].spin_conserving and table["B2"].spin_conserving
    assert not table["A2"].spin_conserving and not table["B1"].spin_conserving


def test_zeeman_slope(calibration):
    fields = np.linspace(0, 0.2, 11)
    split, slope, _, r2 = emitter.zeeman_slope(calibration.emitter, fields)
    assert slope == pytest.approx(5.98e9, rel=1e-3)
    assert r2 > 0.999
    assert split[0] == pytest.approx(0.0, abs=1.0)


def test_ple_spectrum_weights(calibration):
    table = calibration.table()
    lw = 38e6
    grid = np.array([e.frequency for e in table.entries])
    spec = emitter.ple_spectrum(table, lw, grid, populations=(1.0, 0.0))
    # only transitions out of ground level 1 (A1, B1) are visible
    assert spec[0] == pytest.approx(table["A1"].relative_strength, rel=1e-3)
    with pytest.raises(InvalidInputError):
        emitter.ple_spectrum(table, lw, grid, populations=(0.7, 0.7))
    with pytest.raises(InvalidInputError):
        emitter.ple_spectrum(table, 0.0, grid)


def test_params_validation():
    with pytest.raises(InvalidInputError):
        EmitterParams(f_orb_gs=1.5)
    with pytest.raises(InvalidInputError):
        EmitterParams(delta_es=0)
    with pytest.raises(InvalidInputError):
        EmitterParams.from_dict({"delta_gss": 1.0})
    p = EmitterParams(f_orb_es=0.2)
    assert EmitterParams.from_dict(p.to_dict()) == p


directions = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1)


@settings(max_examples=60, deadline=None)
@given(b=st.floats(0.0, 2.0), d=directions,
       strain=st.floats(0, 5e11), f_gs=st.floats(0, 1), f_es=st.floats(0, 1))
def test_transition_table_invariants(b, d, strain, f_gs, f_es):
    p = EmitterParams(strain_es=strain, f_orb_gs=f_gs, f_orb_es=f_es)
    table = emitter.emitter_table(p, FieldConfig.along(b, d))
    s = np.array([e.relative_strength for e in table.entries])
    assert np.all(s >= 0) and np.all(s <= 2 + 1e-12)
    assert s.sum() == pytest.approx(2.0)
    assert table.qubit_freq >= -1e-3
    eta = emitter.branching_ratio(table)
    assert eta > 0


@settings(max_examples=40, deadline=None)
@given(b=st.floats(0.0, 1.0), d=directions)
def test_time_reversal_pairs(b, d):
    # reversing the field swaps the roles of the Kramers partners
    p = EmitterParams()
    t1 = emitter.emitter_table(p, FieldConfig.along(b, d))
    t2 = emitter.emitter_table(p, FieldConfig.along(-b, d) if b else FieldConfig.along(0.0, d))
    assert t1.qubit_freq == pytest.approx(t2.qubit_freq, rel=1e-9, abs=1e-3)

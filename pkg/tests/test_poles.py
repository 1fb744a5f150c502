"""Pole sets: construction, file round-trips, validation, fixtures."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratexpint.krylov import expmv_rational
from ratexpint.poles import (PoleFileError, PoleSet, builtin_pole_set,
                             check_conjugate_closure, load_poles, repeated_real,
                             save_poles, validate)
from ratexpint.problems import fd_laplacian_1d
from ratexpint.solvers import ShiftedSolver, SolverConfig


def test_repeated_real_basic():
    ps = repeated_real(-3.14e5, 500)
    assert len(ps) == 500
    assert all(xi == complex(-3.14e5, 0.0) for xi in ps)
    assert ps.kind == "repeated-real"


def test_repeated_real_paper_style_small_value():
    ps = repeated_real(-1.0 / 20.0, 3)
    assert ps.poles[0] == complex(-0.05, 0.0)


def test_repeated_real_singleton():
    assert len(repeated_real(2.0, 1)) == 1


def test_zero_pole_rejected_everywhere():
    with pytest.raises(ValueError):
        repeated_real(0.0, 4)
    with pytest.raises(ValueError):
        PoleSet(poles=(0.0 + 0.0j,), kind="complex-file")


def test_conjugate_closure_check():
    assert check_conjugate_closure([1 + 2j, 1 - 2j, 3 + 0j])
    assert not check_conjugate_closure([1 + 2j, 3 + 0j])
    assert not check_conjugate_closure([1 + 2j, 2 - 2j])


def test_load_rejects_open_set(tmp_path):
    path = tmp_path / "open.poles"
    path.write_text("# convention=positive-real\n1.0 2.0\n3.0 0.0\n")
    with pytest.raises(PoleFileError):
        load_poles(path)
    ps = load_poles(path, allow_open=True)
    assert not ps.conjugate_closed


def test_load_accepts_closed_set(tmp_path):
    path = tmp_path / "closed.poles"
    path.write_text("1.0 2.0\n1.0 -2.0\n3.0 0.0\n")
    ps = load_poles(path)
    assert len(ps) == 3
    assert ps.conjugate_closed


def test_sign_convention_flip(tmp_path):
    path = tmp_path / "neg.poles"
    path.write_text("# convention=negative-real\n-1.0 2.0\n-1.0 -2.0\n")
    ps = load_poles(path)
    assert ps.convention == "positive-real"
    assert ps.poles[0] == 1.0 - 2.0j


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(12)
    vals = rng.standard_normal(6) * 10.0 ** rng.integers(-8, 8, 6)
    poles = []
    for re, im in zip(vals[:3], vals[3:]):
        poles += [complex(re, abs(im)), complex(re, -abs(im))]
    ps = PoleSet(poles=tuple(poles), kind="complex-file", interval=(0.0, 1e6))
    path = tmp_path / "rt.poles"
    save_poles(ps, path)
    back = load_poles(path)
    assert back.poles == ps.poles
    assert back.interval == ps.interval


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=-1e30, max_value=1e30, allow_nan=False),
       st.floats(min_value=0.0, max_value=1e30, allow_nan=False))
def test_round_trip_property(tmp_path_factory, re, im):
    if re == 0.0 and im == 0.0:
        return
    path = tmp_path_factory.mktemp("poles") / "p.poles"
    ps = PoleSet(poles=(complex(re, im), complex(re, -im)) if im else (complex(re, 0.0),),
                 kind="complex-file")
    save_poles(ps, path)
    assert load_poles(path).poles == ps.poles


def test_validate_warns_near_spectrum():
    ps = PoleSet(poles=(complex(-500.0, 0.0),), kind="repeated-real")
    warnings = validate(ps, lam_max=1000.0, scale=1.0)
    assert len(warnings) == 1
    assert "pole 0" in warnings[0]


def test_validate_silent_for_safe_poles():
    ps = builtin_pole_set("cf16_shifted")
    assert validate(ps, lam_max=1e6) == []


def test_validate_flags_pole_just_off_axis():
    ps = PoleSet(poles=(complex(-10.0, 1e-6),), kind="complex-file",
                 conjugate_closed=False)
    # distance 1e-6 from the segment, threshold 1e-8 * 1000 = 1e-5
    assert len(validate(ps, lam_max=1000.0)) == 1


def test_builtin_cf12_properties():
    ps = builtin_pole_set("cf12")
    assert len(ps) == 12
    assert ps.conjugate_closed
    assert check_conjugate_closure(ps.poles)
    # rational best-approximation sets straddle the imaginary axis
    assert any(xi.real < 0 for xi in ps)
    assert any(xi.real > 0 for xi in ps)


def test_builtin_cf16_shifted_is_iterative_safe():
    ps = builtin_pole_set("cf16_shifted")
    assert len(ps) == 16
    assert all(xi.real > 0 for xi in ps)


def test_unknown_builtin():
    with pytest.raises(FileNotFoundError):
        builtin_pole_set("nope")


def test_cf12_drives_engine_below_tolerance_quickly():
    """The fixture's purpose: tolerance 1e-8 within 14 iterations on a
    1D second-difference matrix with spectrum scaled to [1, 1000]."""
    op_raw = fd_laplacian_1d(900, 900.0, "dirichlet")
    k = np.arange(1, 901)
    lam = 2.0 - 2.0 * np.cos(k * np.pi / 901.0)
    a = 999.0 / (lam.max() - lam.min())
    b = 1.0 - a * lam.min()
    import scipy.sparse as sp
    from ratexpint.linalg import SparseOperator
    op = SparseOperator((a * op_raw.tocsr()
                         + b * sp.identity(900, format="csr")).tocsr(), symmetric=True)
    c0 = np.full(900, 1.0 / 30.0)
    solver = ShiftedSolver(op, SolverConfig(mode="direct"))
    rep = expmv_rational(op, 1.0, [c0], 1.0, builtin_pole_set("cf12"), solver,
                         tol=1e-8, m_min=12, check_cadence=1)
    assert rep.converged
    assert rep.m <= 14
    assert rep.estimate <= 1e-8


def test_conjugate_closed_set_keeps_real_data_real():
    rng = np.random.default_rng(13)
    op = fd_laplacian_1d(80, 1.0, "neumann")
    c0 = rng.standard_normal(80)
    solver = ShiftedSolver(op, SolverConfig(mode="direct"))
    rep = expmv_rational(op, 1.0, [c0], 1e-3, builtin_pole_set("cf12"), solver,
                         tol=1e-10, m_min=4, check_cadence=2)
    out = rep.vector
    assert np.iscomplexobj(out)
    assert np.max(np.abs(out.imag)) <= 1e-9 * np.linalg.norm(out)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluxerasure.driven import (DrivePulse, SubspaceRotation, chevron_scan, compose_logical_rotation,
                                pulse_propagators, rotation_unitary, simulate_drive)

from conftest import TWO_PI

angles = st.floats(0.0, 2 * math.pi, exclude_max=True)


@pytest.fixture(scope="module")
def spec6(paper_spectrum):
    return paper_spectrum.truncated(6)


def ket(i, dim=3):
    v = np.zeros(dim, dtype=complex)
    v[i] = 1
    return v


@given(angles, st.floats(-10, 10), st.integers(0, 3), st.integers(1, 3))
def test_rotation_unitary(theta, phi, i, dj):
    j = min(i + dj, 5)
    u = rotation_unitary(SubspaceRotation(i, j, theta, phi), 6)
    assert np.allclose(u.conj().T @ u, np.eye(6), atol=1e-12)
    # identity outside the subspace
    for k in set(range(6)) - {i, j}:
        assert u[k, k] == 1


def test_rotation_examples():
    assert np.allclose(rotation_unitary(SubspaceRotation(0, 1, 0.0), 3), np.eye(3))
    flip = rotation_unitary(SubspaceRotation(0, 1, math.pi), 3) @ ket(0)
    assert abs(abs(flip[1]) ** 2 - 1) < 1e-12
    half = rotation_unitary(SubspaceRotation(1, 2, math.pi / 2), 3) @ ket(1)
    assert np.allclose(np.abs(half) ** 2, [0, 0.5, 0.5], atol=1e-12)


def test_rotation_validation():
    with pytest.raises(ValueError):
        SubspaceRotation(2, 1, 0.1)
    with pytest.raises(ValueError):
        SubspaceRotation(0, 1, 2 * math.pi)
    with pytest.raises(ValueError):
        rotation_unitary(SubspaceRotation(0, 5, 0.1), 3)


def test_logical_pi_rotation():
    u = compose_logical_rotation(math.pi)
    # oracle: the explicit product of the three rotations
    r01 = np.array([[0, -1j, 0], [-1j, 0, 0], [0, 0, 1]])
    r12 = np.array([[1, 0, 0], [0, 0, -1j], [0, -1j, 0]])
    assert np.allclose(u, r01 @ r12 @ r01, atol=1e-15)
    assert abs(abs((u @ ket(0))[2]) ** 2 - 1) < 1e-12


def test_logical_half_rotation():
    p = np.abs(compose_logical_rotation(math.pi / 2) @ ket(0)) ** 2
    assert np.allclose(p, [0.5, 0.0, 0.5], atol=1e-12)


unit = st.floats(-1.0, 1.0)


@given(angles, st.floats(-4, 4), unit, unit, unit, unit)
def test_logical_rotation_stays_in_subspace(theta, phi, ar, ai, br, bi):
    psi = np.array([complex(ar, ai), 0, complex(br, bi)])
    if np.linalg.norm(psi) < 1e-3:
        return
    psi = psi / np.linalg.norm(psi)
    u = compose_logical_rotation(theta, phi)
    assert abs((u @ psi)[1]) < 1e-12
    p2 = abs((u @ ket(0))[2]) ** 2
    assert p2 == pytest.approx(math.sin(theta / 2) ** 2, abs=1e-12)


def test_zero_amplitude_keeps_populations(spec6):
    psi0 = np.ones(6, dtype=complex) / math.sqrt(6)
    psi = simulate_drive(spec6, DrivePulse(0.0, spec6.levels[2] / 2, 100e-9), psi0)
    assert np.allclose(np.abs(psi) ** 2, np.abs(psi0) ** 2, atol=1e-12)


def test_rabi_pi_pulse(spec6):
    w01 = spec6.levels[1]
    amp = w01 / 100
    n01 = spec6.charge_elements[0, 1]
    duration = math.pi / (amp * n01)
    psi = simulate_drive(spec6, DrivePulse(amp, w01, duration), ket(0, 6))
    assert abs(psi[1]) ** 2 == pytest.approx(1.0, abs=0.02)
    assert abs(np.linalg.norm(psi) - 1) < 1e-8


def test_simulate_drive_validation(spec6, paper_spectrum):
    pulse = DrivePulse(1e9, spec6.levels[2] / 2, 10e-9)
    with pytest.raises(ValueError):
        simulate_drive(paper_spectrum.truncated(3), pulse, ket(0))
    with pytest.raises(ValueError):
        simulate_drive(spec6, pulse, 2 * ket(0, 6))
    with pytest.raises(ValueError):
        DrivePulse(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        DrivePulse(1.0, 1.0, 0.0)


def test_step_refinement(spec6):
    carrier = spec6.levels[2] / 2 + TWO_PI * 0.5e6
    args = (spec6, [2.0e9], [carrier], 480e-9)
    coarse = np.abs(pulse_propagators(*args, refine=16)[0][:, 0]) ** 2
    half = np.abs(pulse_propagators(*args, refine=32)[0][:, 0]) ** 2
    fine = np.abs(pulse_propagators(*args, refine=160)[0][:, 0]) ** 2
    assert np.max(np.abs(coarse - half)) < 1e-8
    assert np.max(np.abs(coarse - fine)) < 1e-6


def test_chevron_zero_row_and_shape(spec6):
    dets = TWO_PI * np.array([-1e6, 0.0, 1e6])
    p2 = chevron_scan(spec6, 480e-9, [0.0, 1.5e9], dets, refine=4)
    assert p2.shape == (2, 3)
    assert np.all(np.abs(p2[0]) < 1e-10)
    with pytest.raises(ValueError):
        chevron_scan(spec6, 480e-9, [], dets)
    with pytest.raises(ValueError):
        chevron_scan(spec6, 480e-9, [1e9], dets, repeats=3)


def test_chevron_threads_identical(spec6):
    dets = TWO_PI * np.linspace(-1e6, 1e6, 3)
    a = chevron_scan(spec6, 200e-9, [1e9, 2e9], dets, refine=2, threads=1)
    b = chevron_scan(spec6, 200e-9, [1e9, 2e9], dets, refine=2, threads=2)
    assert np.array_equal(a, b)


def test_two_pulses_equal_double_duration(spec6):
    dets = TWO_PI * np.array([0.0, 1e6])
    a = chevron_scan(spec6, 240e-9, [1.5e9], dets, repeats=2, refine=4)
    b = chevron_scan(spec6, 480e-9, [1.5e9], dets, repeats=1, refine=4)
    assert np.allclose(a, b, atol=1e-12)

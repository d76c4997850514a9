import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from oracles import dgs_energy_loop
from sirf.registration import (
    RegistrationConfig,
    default_levels,
    dgs_energy,
    dgs_gradient,
    gradient_region,
    normalized_energy,
    register,
    translation_sweep,
)
from sirf.resample import TransformParams, warp
from sirf.simulate import piecewise_constant_scene, simulate
from sirf.tensor import forward_gradient, pixel_group_norm, replicate_pan

EPS = 1e-10


def smooth_random(rng, shape, sigma=2.0, scale=50.0):
    return gaussian_filter(rng.standard_normal(shape), (0, sigma, sigma)) * scale


def random_theta(rng, kind):
    if kind == "translation":
        return TransformParams.translation(*rng.uniform(-3, 3, size=2))
    a = np.eye(2, 3) + rng.uniform(-0.03, 0.03, size=(2, 3))
    a[:, 2] = rng.uniform(-2, 2, size=2)
    return TransformParams("affine", tuple(a.ravel()))


def fd_gradient(x, p, theta, h=1e-4):
    """Central differences of E/M with the summation region held at its value at theta.

    ``h`` is a displacement in pixels: linear affine entries are stepped by
    ``h / max(m, n)`` so no sample point moves further than ``h``.
    """
    _, _, _, inside = _inside(p, theta, x.shape[1:])
    region = gradient_region(inside)
    count = int(region.sum())
    g = np.zeros(len(theta.theta))
    linear = {0, 1, 3, 4} if theta.kind == "affine" else set()
    for k in range(len(g)):
        e = np.zeros(len(g))
        e[k] = h / max(x.shape[1:]) if k in linear else h
        step = e[k]
        fp = dgs_energy(x, p, theta.with_vector(theta.vector + e), EPS, region)[0]
        fm = dgs_energy(x, p, theta.with_vector(theta.vector - e), EPS, region)[0]
        g[k] = (fp - fm) / (2 * step * count)
    return g, region


def _inside(p, theta, shape):
    from sirf.resample import bilinear, source_coords

    sx, sy = source_coords(shape, theta)
    return bilinear(p, sx, sy)


def test_identity_energy_is_epsilon_floor(rng):
    p = rng.normal(size=(1, 12, 10))
    x = replicate_pan(p, 3)
    e, count = dgs_energy(x, p, TransformParams.identity(), EPS)
    assert count == 120
    assert e == pytest.approx(120 * math.sqrt(EPS), rel=1e-12)


def test_zero_overlap_is_infinite():
    x = np.ones((2, 10, 10))
    p = np.ones((1, 10, 10))
    assert normalized_energy(x, p, TransformParams.translation(25.0, 0.0)) == math.inf
    assert dgs_energy(x, p, TransformParams.translation(0.0, -40.0))[1] == 0


@pytest.mark.parametrize("kind", ["translation", "affine"])
def test_energy_matches_loop(rng, kind):
    for _ in range(3):
        x = rng.normal(size=(3, 14, 12)) * 10
        p = rng.normal(size=(1, 14, 12)) * 10
        theta = random_theta(rng, kind)
        e, count = dgs_energy(x, p, theta, 1e-3)
        oe, ocount = dgs_energy_loop(x, p[0], kind, theta.theta, 1e-3)
        assert count == ocount
        assert abs(e - oe) <= 1e-10 * oe


def test_zero_reference_gives_vtv(rng):
    x = rng.normal(size=(3, 9, 11))
    e, _ = dgs_energy(x, np.zeros((1, 9, 11)), TransformParams.identity(), EPS)
    g = forward_gradient(x)
    vtv_eps = float(np.sum(np.sqrt(pixel_group_norm(g) ** 2 + EPS)))
    assert e == pytest.approx(vtv_eps, rel=1e-13)


def test_gradient_vanishes_at_exact_alignment(rng):
    p = smooth_random(rng, (1, 32, 32))
    g = dgs_gradient(replicate_pan(p, 2), p, TransformParams.identity(), EPS)
    assert np.linalg.norm(g) <= 1e-6 * np.abs(p).max()


@pytest.mark.parametrize("kind", ["translation", "affine"])
def test_gradient_matches_finite_differences(rng, kind):
    worst = 0.0
    for _ in range(50):
        p = smooth_random(rng, (1, 64, 64))
        x = replicate_pan(smooth_random(rng, (1, 64, 64)) + p, 2)
        theta = random_theta(rng, kind)
        # bilinear sampling has kinks at integer positions; over 4096 sample points
        # a 1e-4 px affine step crosses some of them, so affine uses 1e-6 px
        fd, region = fd_gradient(x, p, theta, 1e-4 if kind == "translation" else 1e-6)
        an = dgs_gradient(x, p, theta, EPS, region)
        worst = max(worst, np.linalg.norm(an - fd) / np.linalg.norm(fd))
    assert worst <= 1e-3


def test_gradient_on_affine_ramp():
    yy, xx = np.mgrid[0:64, 0:64].astype(float)
    p = (2.0 * xx + 0.5 * yy + 10 * np.sin(xx / 7) * np.cos(yy / 9))[np.newaxis]
    x = replicate_pan(np.roll(p, 1, axis=2) * 0.9, 1)
    theta = TransformParams("affine", (1.01, 0.02, 0.7, -0.015, 0.99, -0.4))
    fd, region = fd_gradient(x, p, theta, 1e-6)
    an = dgs_gradient(x, p, theta, EPS, region)
    for k in range(6):
        assert abs(an[k] - fd[k]) <= 1e-3 * np.linalg.norm(fd)


def test_central_derivative_mode_agrees_roughly(rng):
    p = smooth_random(rng, (1, 48, 48), sigma=3.0)
    x = replicate_pan(p, 1)
    theta = TransformParams.translation(0.6, -0.3)
    exact = dgs_gradient(x, p, theta, EPS)
    central = dgs_gradient(x, p, theta, EPS, derivative="central")
    assert np.dot(exact, central) > 0.9 * np.linalg.norm(exact) * np.linalg.norm(central)
    with pytest.raises(ValueError):
        dgs_gradient(x, p, theta, EPS, derivative="forward")


def test_register_zero_shift_returns_identity():
    gt = piecewise_constant_scene(64, 64, seed=1)
    _, pan = simulate(gt, 4)
    theta, _ = register(gt, pan)
    assert np.abs(theta.vector).max() <= 1e-3


def test_accepted_energies_never_increase_within_a_level():
    gt = piecewise_constant_scene(96, 96, seed=2)
    _, pan = simulate(gt, 4, theta_true=TransformParams.translation(2.0, 1.0))
    for armijo in (0.0, 0.1, 0.5):
        _, trace = register(gt, pan, cfg=RegistrationConfig(armijo=armijo, inner_iters=6))
        assert len(trace) > 0
        for a, b in zip(trace.rows, trace.rows[1:]):
            if a["level"] == b["level"]:
                assert b["energy"] <= a["energy"]


def remap(pan, gamma=0.4, gain=0.5, offset=10.0):
    return gain * 255.0 * (np.clip(pan, 0, None) / 255.0) ** gamma + offset


def test_recovers_shift_under_intensity_remap():
    # measured on seeds 0-4: seed 0 stalls at 0.66 px (flat coarse landscape) and
    # seed 2 ends with ty=0.24; the sweep argmin is exact on all five, see notes
    shifts = np.arange(-10, 11)
    hits = 0
    for seed in range(5):
        gt = piecewise_constant_scene(128, 128, seed=seed)
        _, pan = simulate(gt, 4, theta_true=TransformParams.translation(2.0, 0.0))
        g = remap(pan)
        assert shifts[np.argmin(translation_sweep(gt, g, shifts))] == 2
        theta, _ = register(gt, g)
        hits += abs(theta.shift[0] - 2.0) <= 0.1 and abs(theta.shift[1]) <= 0.1
    assert hits >= 3


def test_recovers_plain_shift():
    for seed in range(3):
        gt = piecewise_constant_scene(128, 128, seed=seed)
        _, pan = simulate(gt, 4, theta_true=TransformParams.translation(2.0, 0.0))
        theta, _ = register(gt, pan)
        assert abs(theta.shift[0] - 2.0) <= 0.05 and abs(theta.shift[1]) <= 0.05


@given(
    st.integers(0, 50),
    st.integers(-4, 4),
    st.floats(0.3, 3.0),
    st.floats(0.4, 4.0),  # below ~0.35 border effects win, see notes
    st.floats(-50, 50),
)
def test_integer_argmin_invariant_to_monotone_remap(seed, shift, gamma, gain, offset):
    gt = piecewise_constant_scene(64, 64, seed=seed)
    _, pan = simulate(gt, 4, theta_true=TransformParams.translation(float(shift), 0.0))
    shifts = np.arange(-6, 7)
    a = shifts[np.argmin(translation_sweep(gt, pan, shifts))]
    b = shifts[np.argmin(translation_sweep(gt, remap(pan, gamma, gain, offset), shifts))]
    assert a == b == shift


def test_default_levels():
    assert default_levels((200, 160)) == 3
    assert default_levels((32, 32)) == 1
    assert default_levels((1024, 1024)) == 4


def test_config_validation():
    with pytest.raises(ValueError):
        RegistrationConfig(eta=1.0)
    with pytest.raises(ValueError):
        RegistrationConfig(kind="projective")
    with pytest.raises(ValueError):
        RegistrationConfig(armijo=1.0)
    with pytest.raises(ValueError):
        register(np.ones((1, 16, 16)), np.ones((1, 16, 16)), TransformParams.translation(40.0, 0.0))


@pytest.mark.parametrize("seed", [1, 4])
def test_affine_registration_recovers_translation(seed):
    gt = piecewise_constant_scene(96, 96, seed=seed)
    _, pan = simulate(gt, 4, theta_true=TransformParams.translation(2.0, -1.0))
    theta, _ = register(gt, pan, cfg=RegistrationConfig(kind="affine", inner_iters=10))
    a = theta.matrix()
    centre = np.array([47.5, 47.5])
    shift = a[:, :2] @ centre + a[:, 2] - centre
    np.testing.assert_allclose(shift, [2.0, -1.0], atol=0.1)
    np.testing.assert_allclose(a[:, :2], np.eye(2), atol=0.01)
    w, _ = warp(pan, theta)
    assert w.shape == pan.shape

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from archcal.drivers import dissipated, interface_path
from archcal.interface import (InterfaceParams, InterfaceState, interface_damage,
                               interface_return_map, interface_tangent, surface_values)
from archcal.scenarios import JOINT


def _fresh():
    return InterfaceState.from_array(np.zeros(11))


def test_elastic_response(joint):
    jump = np.array([0.2 * joint.ft / joint.kn, 0.3 * joint.c / joint.kt])
    s, t = interface_return_map(_fresh(), jump, joint)
    np.testing.assert_allclose(t, [joint.kn * jump[0], joint.kt * jump[1]], rtol=1e-14)
    np.testing.assert_allclose(interface_tangent(_fresh(), jump, joint),
                               np.diag([joint.kn, joint.kt]), rtol=1e-14)
    assert s.D_n == s.D_t == 0.0


def test_return_lands_on_surfaces(joint):
    # tension beyond the cut-off
    s, t = interface_return_map(_fresh(), [3 * joint.ft / joint.kn, 0.0], joint)
    assert surface_values(t, s.q, joint)[1] == pytest.approx(0.0, abs=1e-9)
    # shear under compression beyond Coulomb
    sig = -0.5
    s, t = interface_return_map(_fresh(), [sig / joint.kn, 5 * joint.c / joint.kt], joint)
    Fs = surface_values(t, s.q, joint)[0]
    assert Fs == pytest.approx(0.0, abs=1e-9)
    assert t[0] == pytest.approx(sig, rel=1e-9)


def test_params_validation():
    base = dict(JOINT["weak"])
    with pytest.raises(ValueError):
        InterfaceParams(**{**base, "ft": 1.0})  # above c / tan_phi
    with pytest.raises(ValueError):
        InterfaceParams(**{**base, "Gs": 0.0})
    with pytest.raises(ValueError):
        InterfaceParams(**{**base, "tan_phi_g": 0.9})


def test_q_lim():
    p = InterfaceParams(**JOINT["weak"])
    assert p.q_lim == pytest.approx(0.085 / 0.5 - 0.05)


def test_tension_driver_dissipates_gt(joint):
    t = interface_path(joint, "tension", steps=400)
    assert dissipated(t, "jump_n", "sigma") == pytest.approx(joint.Gt, rel=0.02)
    assert t["D_n"][-1] == pytest.approx(1.0)
    assert abs(t["sigma"][-1]) < 1e-6 * joint.ft


def test_shear_driver_dissipates_gs(joint):
    t = interface_path(joint, "shear", steps=400)
    assert dissipated(t, "jump_t", "tau") == pytest.approx(joint.Gs, rel=0.02)
    assert abs(t["sigma"]).max() < 1e-8
    assert t["D_t"][-1] == pytest.approx(1.0, abs=1e-6)


def test_shear_under_compression_keeps_friction(joint):
    sn = -0.3
    t = interface_path(joint, "shear", steps=400, normal_stress=sn)
    np.testing.assert_allclose(t["sigma"], sn, atol=1e-8)
    assert t["tau"][-1] == pytest.approx(-sn * joint.tan_phi, rel=1e-3)
    assert t["W_pc"].max() == 0.0


def test_damage_matches_work_ratios(joint):
    t = interface_path(joint, "tension", steps=100)
    s = InterfaceState.from_array(np.zeros(11))
    s.W_pt = t["W_pt"][40]
    s.D_n = s.D_t = 0.0
    dn, _ = interface_damage(s, joint)
    assert dn == pytest.approx(t["D_n"][40], rel=1e-12)


def _nominal(state, jump, p):
    from archcal.interface import iface_update
    _, _, nom, _, ok = iface_update(p.to_array(), state.to_array(), np.asarray(jump, float))
    assert ok
    return nom


def iface_tangent_cases(p: InterfaceParams, seed: int = 0, n_each: int = 6):
    """(state, jump, regime): elastic, hardening (tension with q growing) and softening."""
    rng = np.random.default_rng(seed)
    out = []
    et, es = p.ft / p.kn, p.c / p.kt
    for regime in ("elastic", "hardening", "softening"):
        for _ in range(n_each):
            if regime == "elastic":
                target = np.array([rng.uniform(-0.9, 0.5) * et, rng.uniform(-0.5, 0.5) * es])
            elif regime == "hardening":
                target = np.array([et * (1 + rng.uniform(0.5, 3.0)), 0.0])
            else:
                target = np.array([rng.uniform(-0.2, 0.0) / p.kn,
                                   es * (1 + rng.uniform(2.0, 20.0))])
            s = _fresh()
            k = 20
            for i in range(1, k + 1):
                s, _ = interface_return_map(s, target * i / k, p)
            out.append((s, target * (k + 0.5) / k, regime))
    return out


def test_interface_tangent_matches_finite_differences(joint):
    for s, jump, regime in iface_tangent_cases(joint):
        T = interface_tangent(s, jump, joint)
        Tf = np.zeros((2, 2))
        for j in range(2):
            h = 1e-7 * max(joint.ft, joint.c) / (joint.kn if j == 0 else joint.kt)
            jp, jm = jump.copy(), jump.copy()
            jp[j] += h
            jm[j] -= h
            Tf[:, j] = (_nominal(s, jp, joint) - _nominal(s, jm, joint)) / (2 * h)
        assert np.linalg.norm(T - Tf) <= 1e-4 * np.linalg.norm(Tf), regime


@given(path=st.lists(st.tuples(st.floats(-0.02, 0.05), st.floats(-0.2, 0.2)),
                     min_size=2, max_size=12))
@settings(max_examples=40, deadline=None)
def test_damage_never_decreases(path):
    p = InterfaceParams(**JOINT["weak"])
    s = _fresh()
    prev = (0.0, 0.0)
    for jump in path:
        s, _ = interface_return_map(s, np.array(jump), p)
        assert s.D_n >= prev[0] - 1e-15 and s.D_t >= prev[1] - 1e-15
        assert 0.0 <= s.D_n <= 1.0 and 0.0 <= s.D_t <= 1.0
        assert s.D_t >= s.D_n - 1e-15
        prev = (s.D_n, s.D_t)

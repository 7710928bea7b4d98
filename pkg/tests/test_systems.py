import numpy as np
import pytest

from affinectl.errors import BadParameter, UnknownSystem
from affinectl.systems import (BUILTIN_NAMES, affine_part, builtin_system, collinear_qr,
                               constant_signal, full_rank_everywhere, jacobian_errors,
                               probe_states, satisfies_linearizing_assumption)

VARIANTS = [(name, None) for name in BUILTIN_NAMES] + [
    ("fhn-activator", {"b0": 11 / 4, "b2": 1.0}),
    ("mechanical", {"b0": 11 / 4, "b2": 1.0}),
]


@pytest.mark.parametrize("name,overrides", VARIANTS)
def test_jacobians_match_finite_differences(name, overrides):
    sys_ = builtin_system(name, overrides)
    er, eb = jacobian_errors(sys_, probe_states(sys_.n), h=1e-5)
    assert er < 1e-6 and eb < 1e-6


@pytest.mark.parametrize("name", [n for n in BUILTIN_NAMES if n != "schloegl-kinetics"])
def test_full_rank_coupling_on_probes(name):
    sys_ = builtin_system(name)
    assert full_rank_everywhere(sys_, probe_states(sys_.n))


def test_fhn_defaults():
    p = builtin_system("fhn-activator").params
    assert (p["a0"], p["a1"], p["a2"]) == (0.056, -0.064, 0.08)


def test_sir_defaults_and_conservation():
    sys_ = builtin_system("sir")
    assert sys_.params["beta"] == 0.36 and sys_.params["gamma"] == 0.2
    for x in probe_states(3):
        r = sys_.R(x)
        assert abs(np.sum(r)) <= 4 * np.finfo(float).eps * np.max(np.abs(r))
        assert np.sum(sys_.B(x)) == 0.0


def test_free_particle_structure():
    sys_ = builtin_system("free-particle")
    x = np.array([0.7, -1.3])
    np.testing.assert_array_equal(sys_.R(x), [-1.3, 0.0])
    np.testing.assert_array_equal(sys_.B(x), [[0.0], [1.0]])


def test_diagonal_lti_structure():
    sys_ = builtin_system("diagonal-lti", {"lambda1": 3.0, "lambda2": -1.0})
    np.testing.assert_array_equal(sys_.gradR(np.zeros(2)), np.diag([3.0, -1.0]))
    np.testing.assert_array_equal(sys_.B(np.zeros(2)), [[1.0], [1.0]])


@pytest.mark.parametrize("name,overrides", [
    ("fhn-activator", None), ("fhn-activator", {"b0": 11 / 4, "b2": 1.0}),
    ("mechanical", None), ("sir", None), ("free-particle", None), ("diagonal-lti", None),
])
def test_linearizing_assumption(name, overrides):
    sys_ = builtin_system(name, overrides)
    assert satisfies_linearizing_assumption(sys_)
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, b = rng.uniform(-3, 3, size=(2, sys_.n))
        assert collinear_qr(sys_, a, b)


def test_linearizing_assumption_fails_for_inhibitor_control():
    # control on x leaves the cubic in Q R
    assert not satisfies_linearizing_assumption(builtin_system("fhn-inhibitor"))


def test_affine_part_reproduces_qr():
    for name in ("fhn-activator", "mechanical", "sir"):
        sys_ = builtin_system(name)
        A, b = affine_part(sys_)
        Q = np.eye(sys_.n) - sys_.B(np.full(sys_.n, 0.5)) @ np.linalg.pinv(sys_.B(np.full(sys_.n, 0.5)))
        for x in probe_states(sys_.n):
            assert np.max(np.abs(Q @ sys_.R(x) - (A @ x + b))) < 1e-10


def test_overrides_and_errors():
    assert builtin_system("sir", {"beta": 0.5}).params["beta"] == 0.5
    with pytest.raises(UnknownSystem):
        builtin_system("no-such-system")
    with pytest.raises(BadParameter):
        builtin_system("sir", {"N": 0.0})
    with pytest.raises(BadParameter):
        builtin_system("fhn-activator", {"b0": 1.0, "b2": -1.0})


def test_r_switch_removes_nonlinearity():
    sys_ = builtin_system("fhn-activator", {"r_on": 0.0})
    assert sys_.R(np.array([1.0, 2.0]))[1] == 0.0


def test_signal_shift():
    s = constant_signal(2.0).shifted(100.0)
    assert s(0.3) == 102.0 and s.df(0.3) == 0.0

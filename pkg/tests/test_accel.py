import json
import os
import subprocess
import sys

import numpy as np
import pytest

from adjointlab import (
    backprop_gradient,
    discrete_gradient,
    gradient_integral,
    make_grid,
    rel_discrepancy,
    solve_adjoint,
    solve_discrete_adjoint,
    solve_forward,
    tangent_gradient,
)
from adjointlab import _accel, _kernels
from adjointlab.harness.zoo import zoo

from conftest import SCHEME_NAMES

jit_enabled = _accel.ENABLED


def _all_gradients(vf, loss, theta, z0, scheme, n=30):
    base = solve_forward(vf, theta, z0, make_grid(0, 1, n), scheme)
    return base, {
        "backprop": backprop_gradient(vf, theta, base, loss),
        "discrete": discrete_gradient(vf, theta, base, solve_discrete_adjoint(vf, theta, base, loss)),
        "tangent": tangent_gradient(vf, theta, base, loss),
        "continuous": gradient_integral(vf, theta, base, solve_adjoint(vf, theta, base, loss, "euler")),
    }


def test_backend_reflects_flag():
    flag = os.environ.get("ADJOINTLAB_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
    assert _accel.backend_name() == ("numpy" if flag else "numba")


@pytest.mark.skipif("not jit_enabled")
def test_zoo_fields_are_compiled():
    vf = zoo("logistic").build()[0]
    assert _accel.is_jitted(vf.eval)
    assert not _accel.is_jitted(vf.pure().eval)
    ks = _kernels.kit(vf.eval)
    assert _accel.is_jitted(ks.forward)
    assert not _accel.is_jitted(_kernels.kit(vf.pure().eval).forward)


def test_dispatch_falls_back_for_python_callbacks():
    kernel = _kernels.kit(lambda t, z, th: z).forward
    assert not _accel.is_jitted(kernel)


@pytest.mark.parametrize("name", ["linear-system", "logistic", "multilabel-linear"])
@pytest.mark.parametrize("scheme", SCHEME_NAMES)
def test_compiled_and_interpreted_agree(name, scheme):
    vf, loss, theta, z0 = zoo(name).with_overrides(seed=7).build()
    base_c, fast = _all_gradients(vf, loss, theta, z0, scheme)
    base_p, slow = _all_gradients(vf.pure(), loss, theta, z0, scheme)
    np.testing.assert_allclose(base_c.states, base_p.states, rtol=1e-13, atol=1e-15)
    for key in fast:
        assert rel_discrepancy(fast[key], slow[key]) <= 1e-13, key


_SNIPPET = """
import json
from adjointlab import backend_name, backprop_gradient, make_grid, solve_forward
from adjointlab.harness.zoo import zoo
vf, loss, theta, z0 = zoo("linear-system").build()
base = solve_forward(vf, theta, z0, make_grid(0, 1, 40), "rk4")
print(json.dumps({"backend": backend_name(), "grad": backprop_gradient(vf, theta, base, loss).tolist()}))
"""


def test_env_flag_selects_numpy_fallback():
    env = dict(os.environ, ADJOINTLAB_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", _SNIPPET], env=env, capture_output=True, text=True, check=True)
    got = json.loads(out.stdout)
    assert got["backend"] == "numpy"
    vf, loss, theta, z0 = zoo("linear-system").build()
    base = solve_forward(vf, theta, z0, make_grid(0, 1, 40), "rk4")
    assert rel_discrepancy(got["grad"], backprop_gradient(vf, theta, base, loss)) <= 1e-13

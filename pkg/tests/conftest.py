import numpy as np
import pytest

from reachstep.backstepping import build_certificate
from reachstep.dynamics import ControlAffineSystem
from reachstep.sos import BaseController, synthesize
from reachstep.specfile import FIXTURES, fixture_path, load_spec
from reachstep.symbolic import Polynomial, Var


@pytest.fixture(scope="session")
def specs():
    return {name: load_spec(fixture_path(name)) for name in FIXTURES}


@pytest.fixture(scope="session")
def bases(specs):
    return {name: synthesize(s.surrogate(), s.safe, s.synthesis) for name, s in specs.items()}


@pytest.fixture(scope="session")
def certs(specs, bases):
    return {
        name: build_certificate(s.system, bases[name], s.psi, s.phi, mu=s.mu if s.mu is not None else 1.0,
                                lam=s.lambda_override, spec_hash=s.sha256)
        for name, s in specs.items()
    }


# double integrator p' = v, v' = u with y = p; psi = 1 - y^2, k1 = -y


def double_integrator(box=((-1.0, 1.0), (-2.0, 2.0))) -> ControlAffineSystem:
    return ControlAffineSystem(
        state=("p", "v"), f=(Var("v"), 0.0), g=((0.0,), (1.0,)), h=(Var("p"),), state_box=box, output_names=("y",),
    )


DI_PSI = Polynomial(("y",), {(0,): 1.0, (2,): -1.0})
DI_PHI = Polynomial(("y",), {(2,): 1.0, (0,): -0.5})


def di_base(lam: float = 2.0) -> BaseController:
    return BaseController(vars=("y",), k1=(Polynomial(("y",), {(1,): -1.0}),), lam=lam, delta=0.0, certified=True,
                          status="Optimal")


def di_certificate(mu: float = 1.0, lam: float = 2.0):
    return build_certificate(double_integrator(), di_base(lam), DI_PSI, DI_PHI, mu=mu)


def di_hand_input(x: np.ndarray, mu: float = 1.0, lam: float = 2.0) -> np.ndarray:
    """Written out by hand: b = mu dpsi/dy + d/dt k1 + (lam/2)(v - k1), A = 1, L_f^2 h = 0."""
    p, v = x[:, 0], x[:, 1]
    return mu * (-2.0 * p) + (-v) + 0.5 * lam * (v + p)


def di_hand_Psi(x: np.ndarray, mu: float = 1.0) -> np.ndarray:
    p, v = x[:, 0], x[:, 1]
    return 1.0 - p**2 - (v + p) ** 2 / (2.0 * mu)

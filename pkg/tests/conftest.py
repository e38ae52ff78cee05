import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eqsadj.forward import DC, EQSProblem, Sinusoid
from eqsadj.materials import LinearMaterial
from eqsadj.mesh import build_layered_rect

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

D = 0.01  # layer thickness of the resistor


@pytest.fixture
def layered_mesh():
    return build_layered_rect(D, D, 2, 4)


def layered_problem(mesh=None, sigma1=10.0, sigma2=20.0, eps1=40.0, eps2=60.0, top=None):
    mesh = mesh or build_layered_rect(D, D, 2, 4)
    top = top if top is not None else Sinusoid(1.0, 50.0)
    return EQSProblem(mesh, {1: LinearMaterial(sigma1, eps1), 2: LinearMaterial(sigma2, eps2)},
                      {"top_electrode": top, "bottom_electrode": DC(0.0)})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

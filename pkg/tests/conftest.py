"""Shared fixtures: the expensive coupled solves are computed once."""

import numpy as np
import pytest

from hxopt.problem import build_problem, desk_preset
from hxopt.system import solve_coupled
from hxopt.verify import demo_coupled_system


@pytest.fixture(scope="session")
def desk_problem_32():
    return build_problem(desk_preset("parallel", resolution=32))


@pytest.fixture(scope="session")
def desk_payload_32(desk_problem_32):
    prob = desk_problem_32
    return prob.solve(prob.initial_phi(), prob.config.da)


@pytest.fixture(scope="session")
def desk_problem_64():
    return build_problem(desk_preset("parallel", resolution=64))


@pytest.fixture(scope="session")
def desk_payload_64(desk_problem_64):
    prob = desk_problem_64
    return prob.solve(prob.initial_phi(), prob.config.da)


@pytest.fixture(scope="session")
def demo_system_8():
    return demo_coupled_system(n=8)


@pytest.fixture(scope="session")
def demo_states_8(demo_system_8):
    return solve_coupled(demo_system_8)

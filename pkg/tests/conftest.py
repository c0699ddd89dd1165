import numpy as np
import pytest

from maal import engine, game_model, oracle, scenarios


@pytest.fixture(scope="session")
def lq2():
    game, spec = scenarios.builtin("lq2")
    regs = spec.regularizers(game)
    constants = game_model.estimate_constants(game, regularizers=regs)
    return game, spec, regs, constants


@pytest.fixture(scope="session")
def cournot():
    game, spec = scenarios.builtin("cournot_capacity")
    regs = spec.regularizers(game)
    constants = game_model.estimate_constants(game, regularizers=regs)
    return game, spec, regs, constants


@pytest.fixture(scope="session")
def lq2_solution(lq2):
    return oracle.solve_lq_kkt(lq2[0])


@pytest.fixture(scope="session")
def lq2_short_run(lq2, lq2_solution):
    """A 20k-iteration run with duals and ledger recorded, shared by cheaper tests."""
    game, spec, regs, constants = lq2
    sched = spec.make_schedule(constants)
    return engine.run(game, regs, sched, 20_000, stride=100, constants=constants,
                      reference=(lq2_solution.x, lq2_solution.lam), record_duals=True)


def scalar_game(grad, lower=0.0, upper=1.0, A=1.0, b=1.0, utility=None):
    """One player on ``[lower, upper]`` with one coupling row ``A x <= b``."""
    S = game_model.ActionSet.box([lower], [upper])
    player = game_model.PlayerSpec(S, lambda x: np.atleast_1d(grad(x)), utility)
    return game_model.Game([player], game_model.AffineConstraint.from_matrix([[A]], [b], [1]))

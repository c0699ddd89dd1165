import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maal import scenarios
from maal.engine import auto_delta, validate_schedule
from maal.equilibrium import check_decoupling, feasible_grid
from maal.game_model import check_slater, estimate_constants
from maal.oracle import solve_lq_kkt
from maal.scenarios import ScenarioError, ScenarioSpec


@pytest.mark.parametrize("name", scenarios.BUILTINS)
def test_builtins_build_and_satisfy_slater(name):
    game, spec = scenarios.builtin(name)
    assert spec.name == name
    assert game.dim == sum(S.dim for S in game.sets)
    assert check_slater(game).holds
    # every builtin ships a utility so Nash checks can run
    assert all(p.utility is not None for p in game.players)


def test_unknown_builtin():
    with pytest.raises(KeyError, match="unknown builtin"):
        scenarios.builtin("nope")


def test_lq2_without_interaction_is_decoupled():
    game, _ = scenarios.builtin("lq2", e=0.0)
    x = np.array([0.3, 0.9])
    # each gradient depends on the own action only
    g = game.gradient(x)
    g2 = game.gradient(np.array([0.3, 0.1]))
    assert g[0] == g2[0]
    sol = solve_lq_kkt(game)
    pts = np.vstack([sol.x, feasible_grid(game, 0.1)])
    assert check_decoupling(game, pts, lambda_cap=10.0).passed


def test_cournot_is_symmetric():
    game, _ = scenarios.builtin("cournot_capacity")
    x = np.array([0.4, 1.1, 2.0])
    perm = [2, 0, 1]
    np.testing.assert_allclose(game.gradient(x[perm]), game.gradient(x)[perm], rtol=0, atol=1e-14)
    u = [p.utility(x) for p in game.players]
    assert game.players[0].utility(x[perm]) == pytest.approx(u[2])


@pytest.mark.parametrize("name", scenarios.BUILTINS)
def test_json_round_trip(tmp_path, name):
    spec = scenarios.builtin_spec(name)
    path = tmp_path / "s.json"
    spec.save(path)
    back = ScenarioSpec.load(path)
    assert back == spec
    assert back.to_dict() == spec.to_dict()
    x = spec.build().sample(np.random.default_rng(1), 5)
    for row in x:
        np.testing.assert_array_equal(back.build().gradient(row), spec.build().gradient(row))


def test_reference_round_trip(tmp_path):
    spec = scenarios.builtin_spec("lq2")
    spec.reference = {"x": [0.5, 0.5], "lambda": [0.35]}
    spec.save(tmp_path / "r.json")
    x, lam = ScenarioSpec.load(tmp_path / "r.json").reference_pair()
    np.testing.assert_array_equal(x, [0.5, 0.5])
    np.testing.assert_array_equal(lam, [0.35])


def _doc():
    return scenarios.builtin_spec("lq2").to_dict()


def _edit(path, value):
    doc = _doc()
    node = doc
    for key in path[:-1]:
        node = node[key]
    if value is KeyError:
        del node[path[-1]]
    else:
        node[path[-1]] = value
    return doc


@pytest.mark.parametrize("path, value, pointer", [
    (("players", 0, "set", "kind"), "torus", "/players/0/set/kind"),
    (("players", 1, "set", "upper"), KeyError, "/players/1/set/upper"),
    (("players", 0, "set", "lower"), [0.0, 0.0, 0.0], "/players/0/set/lower"),
    (("players", 0, "utility", "H"), [[1.0]], "/players/0/utility/H"),
    (("players", 0, "regularizer"), "entropic", "/players/0/regularizer"),
    (("constraint", "b"), [1.0, 2.0], "/constraint/b"),
    (("constraint", "A", 0), [1.0], "/constraint/A/0"),
    (("schedule", "gamma0"), -1.0, "/schedule/gamma0"),
    (("schema_version",), 7, "/schema_version"),
    (("horizon",), "long", "/horizon"),
])
def test_schema_errors_carry_pointers(path, value, pointer):
    with pytest.raises(ScenarioError) as info:
        ScenarioSpec.from_dict(_edit(path, value))
    assert info.value.pointer == pointer


def test_inconsistent_set_reported_at_set(tmp_path):
    doc = _edit(("players", 0, "set", "lower"), [2.0])
    with pytest.raises(ScenarioError) as info:
        ScenarioSpec.from_dict(doc).build()
    assert info.value.pointer == "/players/0/set"


def test_malformed_json_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    with pytest.raises(ScenarioError) as info:
        ScenarioSpec.load(path)
    assert info.value.pointer == "/"
    path.write_text(json.dumps({"players": []}))
    with pytest.raises(ScenarioError):
        ScenarioSpec.load(path)


@settings(max_examples=25, deadline=None)
@given(a1=st.floats(0.2, 5), a2=st.floats(0.2, 5), e=st.floats(0, 1), b=st.floats(0.3, 1.9),
       margin=st.floats(0.01, 3))
def test_auto_delta_always_certifies(a1, a2, e, b, margin):
    game, spec = scenarios.builtin("lq2", a=(a1, a2), e=e, b=b)
    c = estimate_constants(game, seed=0, regularizers=spec.regularizers(game))
    spec.schedule["margin"] = margin
    sched = spec.make_schedule(c)
    assert sched.delta == pytest.approx(auto_delta(c, margin))
    cert = validate_schedule(sched, c, horizon_check=10_000)
    assert cert.valid
    assert cert.t0 is not None and np.isfinite(cert.t0)

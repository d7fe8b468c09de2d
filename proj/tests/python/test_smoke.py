"""Smoke tests for the _gridflow module (built by the main CMake tree)."""

import math

import pytest

try:
    import gridflow as gf
except ImportError:
    import _gridflow as gf


@pytest.fixture
def env8():
    return gf.Hypergrid(2, 8, r0=0.1)


def test_env_basics(env8):
    assert env8.num_states == 64
    assert env8.dim == 2
    assert env8.reward(env8.index_of([1, 1])) == pytest.approx(2.6)
    assert env8.reward(env8.index_of([0, 0])) == pytest.approx(0.1)
    assert env8.coords_of(env8.index_of([3, 5])) == [3, 5]
    assert env8.is_branching(env8.index_of([0, 0]))
    assert not env8.is_branching(env8.index_of([7, 7]))


def test_config_errors():
    with pytest.raises(gf.ConfigError):
        gf.Hypergrid(0, 8)
    with pytest.raises(gf.BudgetError):
        gf.Hypergrid(9, 32)


def test_uniform_policy_distribution():
    env = gf.Hypergrid(2, 2, r0=0.1)
    params = gf.init_params(env)
    dist = gf.terminating_distribution(params, env)
    assert dist == pytest.approx([1 / 3, 1 / 6, 1 / 6, 1 / 3], abs=1e-12)


def test_sampling_is_deterministic(env8):
    params = gf.init_params(env8)
    a = gf.sample_trajectories(params, env8, count=4, seed=7)
    b = gf.sample_trajectories(params, env8, count=4, seed=7)
    assert [t.states for t in a] == [t.states for t in b]
    assert all(t.actions[-1] == -1 for t in a)  # -1 encodes Terminate


def test_losses_vanish_at_the_optimum(env8):
    params = gf.optimal_params(env8)
    batch = gf.sample_trajectories(params, env8, count=16, seed=3)
    for kind in ("fm", "db", "tb", "subtb", "subgfn"):
        assert gf.batch_loss(params, env8, batch, kind) < 1e-9
    assert params.log_z == pytest.approx(math.log(16.4))
    dist = gf.terminating_distribution(params, env8)
    target = gf.true_distribution(env8)
    assert gf.l1_distance(dist, target) < 1e-9


def test_subnet_entropy():
    env = gf.Hypergrid(2, 2, r0=0.1)
    params = gf.init_params(env)
    ent = gf.subnet_entropy(params, env, 0)
    assert ent == pytest.approx(2 / 3 * math.log(3) + math.log(6) / 3, abs=1e-12)


def test_grad_check(env8):
    params = gf.init_params(env8)
    batch = gf.sample_trajectories(params, env8, count=4, seed=11)
    for kind in ("tb", "subgfn"):
        assert gf.grad_check(params, env8, batch, kind) < 1e-4


def test_short_training_run_improves_l1():
    env = gf.Hypergrid(2, 8, r0=0.1)
    params, metrics = gf.train(env, kind="subgfn", steps=1500, seed=0,
                               eval_every=500)
    assert metrics[0]["step"] == 0
    assert metrics[-1]["step"] == 1500
    assert metrics[-1]["l1_exact"] < metrics[0]["l1_exact"]
    row = gf.evaluate(params, env)
    assert row["l1_exact"] == pytest.approx(metrics[-1]["l1_exact"])


def test_checkpoint_roundtrip(tmp_path):
    env = gf.Hypergrid(2, 3, r0=0.1)
    params, _ = gf.train(env, kind="tb", steps=200, eval_every=100)
    path = str(tmp_path / "model.ckpt")
    gf.save_checkpoint(path, params, env)
    loaded = gf.load_checkpoint(path, env)
    assert loaded.log_z == params.log_z
    assert loaded.logits_of(3) == params.logits_of(3)
    with pytest.raises(gf.ConfigError):
        gf.load_checkpoint(path, gf.Hypergrid(2, 4, r0=0.1))

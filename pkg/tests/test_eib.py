import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import all_lower_topologies, gradient_check
from topolab.agents import AgentSpec, TaskItem, homogeneous_agents
from topolab.eib.encoder import EncoderConfig, encode_node, encode_query, encode_text
from topolab.eib.model import (
    ABLATIONS,
    CheckpointError,
    EibModel,
    Hyper,
    decode_mask,
    forward,
    fuse,
    gate,
    gnn_forward,
    log_prob,
    log_prob_grad,
    sample_adjacency,
    sample_topology,
)
from topolab.eib.train import SyntheticEnv, TrainConfig, design_topology, evaluate, policy_gradient_step, train
from topolab.harness import generate_synthetic_tasks
from topolab.protocol import RunConfig
from topolab.topology import Topology, full, is_acyclic, template_adjacency

SIG1 = 1 / (1 + math.exp(-1))
TASK = TaskItem("q", "Which gas do plants absorb?", 4, 1)


def zero_gate(hyper=Hyper(4, 3, 1, 2)):
    return {name: np.zeros(shape) for name, shape in hyper.shapes().items() if name.startswith("gate.")}


class TestEncoder:
    def test_deterministic(self):
        assert np.array_equal(encode_text("a b c", 64), encode_text("a b c", 64))

    @given(st.text(alphabet=st.characters(categories=["L", "N", "Zs"]), min_size=1))
    def test_unit_norm(self, text):
        v = encode_text(text, 32, "s")
        norm = np.linalg.norm(v)
        assert norm == 0.0 or abs(norm - 1.0) < 1e-12

    def test_empty_is_zero(self):
        assert not encode_text("", 16).any()

    def test_identical_roles_identical_features(self):
        enc = EncoderConfig()
        assert np.array_equal(encode_node(AgentSpec(0, "critic"), TASK, enc), encode_node(AgentSpec(5, "critic"), TASK, enc))

    def test_roles_differ(self):
        enc = EncoderConfig()
        a = encode_node(AgentSpec(0, "a meticulous physicist"), TASK, enc)
        b = encode_node(AgentSpec(1, "a skeptical historian"), TASK, enc)
        assert a @ b < 1 - 1e-9

    def test_query_encoding(self):
        enc = EncoderConfig(dim=32, salt="x")
        assert np.array_equal(encode_query(TASK, enc), encode_text(TASK.question, 32, "x"))

    def test_salt_changes_buckets(self):
        assert not np.array_equal(encode_text("hello world", 64, "a"), encode_text("hello world", 64, "b"))


class TestForwardPieces:
    def test_gnn_mean_of_two(self):
        z = gnn_forward(template_adjacency("full", 2), np.array([[2.0], [4.0]]), [np.ones((1, 1))], [np.zeros(1)])
        np.testing.assert_allclose(z, [[3.0], [3.0]])

    def test_gnn_zero_weights(self):
        ws = [np.zeros((3, 4)), np.zeros((3, 3))]
        bs = [np.zeros(3), np.zeros(3)]
        assert not gnn_forward(template_adjacency("chain", 5), np.ones((5, 4)), ws, bs).any()

    def test_gnn_chain_symmetry(self):
        x = np.array([[1.0, -2.0], [0.5, 0.3], [1.0, -2.0]])
        ws = [np.eye(2)] * 3
        bs = [np.zeros(2)] * 3
        z = gnn_forward(template_adjacency("chain", 3), x, ws, bs)
        np.testing.assert_allclose(z[0], z[2])

    def test_decode_examples(self):
        np.testing.assert_allclose(decode_mask(np.zeros((3, 2))), 0.5)
        np.testing.assert_allclose(decode_mask(np.array([[1.0, 0.0], [1.0, 0.0]])), SIG1)
        m = decode_mask(np.eye(2))
        np.testing.assert_allclose(np.diag(m), SIG1)
        assert m[0, 1] == m[1, 0] == 0.5

    def test_decode_clamped(self):
        m = decode_mask(np.array([[40.0], [40.0]]))
        assert m.max() <= 1 - 1e-6

    def test_gate_examples(self):
        params = zero_gate()
        np.testing.assert_allclose(gate(np.ones(4), params), [0.5, 0.5])
        params["gate.b2"] = np.array([math.log(2), 0.0])
        np.testing.assert_allclose(gate(np.ones(4), params), [2 / 3, 1 / 3])
        params["gate.b2"] = np.array([10.0, 0.0])
        np.testing.assert_allclose(gate(np.ones(4), params), [0.9999546, 4.54e-5], rtol=1e-4)

    def test_fuse_examples(self):
        md, ms = np.full((3, 3), 0.8), np.full((3, 3), 0.2)
        np.testing.assert_allclose(fuse(md, ms, (1.0, 0.0)), md)
        np.testing.assert_allclose(fuse(md, ms, (0.5, 0.5)), 0.5)

    @given(
        md=arrays(float, (4, 4), elements=st.floats(1e-6, 1 - 1e-6)),
        ms=arrays(float, (4, 4), elements=st.floats(1e-6, 1 - 1e-6)),
        a=st.floats(0, 1),
    )
    def test_fuse_is_convex(self, md, ms, a):
        m = fuse(md, ms, (a, 1 - a))
        assert np.all(m >= np.minimum(md, ms) - 1e-12) and np.all(m <= np.maximum(md, ms) + 1e-12)

    @given(q=arrays(float, 8, elements=st.floats(-1e3, 1e3)), seed=st.integers(0, 2**32 - 1))
    def test_alpha_on_simplex(self, q, seed):
        model = EibModel.init(Hyper(8, 4, 2, 6), seed=seed)
        alpha = gate(q, model.params)
        assert np.all(alpha >= 0) and abs(alpha.sum() - 1) < 1e-12

    def test_ablations(self):
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=1)
        x, q = np.random.default_rng(0).normal(size=(5, 8)), np.ones(8)
        dense = forward(model, x, q, "dense_only")
        assert dense.m_sparse is None and np.array_equal(dense.alpha, [1.0, 0.0])
        assert np.array_equal(forward(model, x, q, "no_fusion").alpha, [0.5, 0.5])
        with pytest.raises(ValueError):
            forward(model, x, q, "triple_view")

    def test_dense_view_is_node_invariant(self):
        model = EibModel.init(Hyper(8, 4, 3, 4), seed=2)
        x = np.random.default_rng(1).normal(size=(5, 8))
        z = forward(model, x, np.ones(8), "dense_only").z["dense"]
        np.testing.assert_allclose(z, np.broadcast_to(z[0], z.shape), atol=1e-12)


class TestSampling:
    def test_near_certain_edges(self, rng):
        assert sample_topology(np.full((5, 5), 1 - 1e-6), rng) == full(5)
        assert sample_topology(np.full((5, 5), 1e-6), rng).num_edges == 0

    def test_golden_pattern(self):
        t = sample_topology(np.full((3, 3), 0.5), np.random.default_rng(2024))
        assert t.edges == [(2, 0), (2, 1)]

    def test_batch_sampler_matches_rate(self, rng):
        m = np.tril(rng.uniform(0.1, 0.9, (4, 4)), -1)
        adjs = sample_adjacency(m, rng, 20_000)
        rows, cols = np.tril_indices(4, -1)
        freq = adjs[:, rows, cols].mean(axis=0)
        p = m[rows, cols]
        assert np.all(np.abs(freq - p) < 4 * np.sqrt(p * (1 - p) / 20_000))

    def test_log_prob_examples(self):
        m = np.full((3, 3), 0.5)
        for adj in all_lower_topologies(3):
            assert log_prob(m, adj) == pytest.approx(math.log(1 / 8))
        m2 = np.array([[0.5, 0.5], [0.9, 0.5]])
        assert log_prob(m2, Topology.from_edges(2, [(1, 0)])) == pytest.approx(-0.10536, abs=1e-5)
        assert log_prob(np.full((2, 2), 1 - 1e-6), full(2)) == pytest.approx(0.0, abs=1e-5)

    @given(n=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
    def test_log_prob_normalized(self, n, seed):
        m = np.random.default_rng(seed).uniform(1e-6, 1 - 1e-6, (n, n))
        total = sum(math.exp(log_prob(m, adj)) for adj in all_lower_topologies(n))
        assert abs(total - 1.0) < 1e-9

    def test_score_at_half(self):
        g = log_prob_grad(np.full((2, 2), 0.5), np.array([[0, 0], [1, 0]], dtype=bool))
        assert g[1, 0] == 2.0 and g[0, 1] == 0.0
        g = log_prob_grad(np.full((2, 2), 0.5), np.zeros((2, 2), dtype=bool))
        assert g[1, 0] == -2.0

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 7))
    @settings(max_examples=30)
    def test_samples_are_acyclic(self, seed, n):
        rng = np.random.default_rng(seed)
        for adj in sample_adjacency(rng.uniform(size=(n, n)), rng, 50):
            assert is_acyclic(adj)


class TestGradients:
    @pytest.mark.parametrize("ablation", ABLATIONS)
    def test_matches_finite_differences(self, ablation):
        assert gradient_check(ablation, instance=0, n=3, dim=4, hidden=3, layers=2) < 1e-4

    def test_equal_rewards_no_update(self):
        agents = homogeneous_agents(3, 0.5, 0.5)
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=0)
        before = model.copy()
        const_env = lambda adjs, tasks, seeds: np.ones(len(tasks))
        tasks = generate_synthetic_tasks(6, 4, 0)
        model, velocity, stats = policy_gradient_step(model, tasks, const_env, TrainConfig(queries_per_batch=6), agents)
        assert stats.grad_norm == 0.0
        for k in model.params:
            assert np.array_equal(model.params[k], before.params[k])

    def test_nonzero_advantage_moves_parameters(self):
        agents = homogeneous_agents(3, 0.5, 0.5)
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=0)
        env = lambda adjs, tasks, seeds: adjs[:, 1, 0].astype(float)  # reward edge 1<-0
        tasks = generate_synthetic_tasks(10, 4, 0)
        cfg = TrainConfig(queries_per_batch=10, samples_per_query=8, epochs=30)
        history = train(model, agents, tasks, env, cfg)
        assert len(history) == 30 and history[-1].mean_reward > history[0].mean_reward
        assert history[-1].mean_edge_prob > history[0].mean_edge_prob


class TestDesign:
    def test_zero_weights_half_mask(self):
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=0)
        for k in model.params:
            if k.startswith("dense."):
                model.params[k][:] = 0.0
        _, info = design_topology(model, homogeneous_agents(4, 0.5, 0.5), TASK, np.random.default_rng(0), "dense_only")
        np.testing.assert_allclose(info["m_final"], 0.5)

    def test_deterministic(self):
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=3)
        agents = homogeneous_agents(5, 0.5, 0.5)
        a, _ = design_topology(model, agents, TASK, np.random.default_rng(9))
        b, _ = design_topology(model, agents, TASK, np.random.default_rng(9))
        assert a == b

    def test_dense_gate_means_dense_mask(self):
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=4)
        model.params["gate.W2"][:] = 0.0
        model.params["gate.b2"][:] = [800.0, 0.0]
        agents = homogeneous_agents(4, 0.5, 0.5)
        _, info = design_topology(model, agents, TASK, np.random.default_rng(0))
        _, dense = design_topology(model, agents, TASK, np.random.default_rng(0), "dense_only")
        np.testing.assert_allclose(info["alpha"], [1.0, 0.0])
        np.testing.assert_allclose(info["m_final"], dense["m_final"])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = EibModel.init(Hyper(8, 4, 2, 4), seed=5, salt="s")
        model.save(tmp_path / "m.json")
        back = EibModel.load(tmp_path / "m.json")
        assert back.hyper == model.hyper and back.encoder == model.encoder
        for k in model.params:
            assert np.array_equal(back.params[k], model.params[k])
        back.save(tmp_path / "n.json")
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "n.json").read_bytes()

    def test_shape_mismatch(self):
        data = EibModel.init(Hyper(8, 4, 2, 4)).to_dict()
        data["params"]["gate.W1"]["shape"] = [4, 9]
        with pytest.raises(CheckpointError):
            EibModel.from_dict(data)

    def test_missing_parameter(self):
        data = EibModel.init(Hyper(8, 4, 2, 4)).to_dict()
        del data["params"]["sparse.b1"]
        with pytest.raises(CheckpointError, match="sparse.b1"):
            EibModel.from_dict(data)

    def test_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(CheckpointError):
            EibModel.load(tmp_path / "x.json")


def test_synthetic_env_rewards():
    agents = [AgentSpec(0, "", 1.0, 0.0)] + [AgentSpec(i, "", 0.0, 1.0) for i in (1, 2)]
    env = SyntheticEnv(agents, RunConfig(rounds=1))
    tasks = [TaskItem("a", "?", 2, 0)] * 2
    adjs = np.zeros((2, 3, 3), dtype=bool)
    adjs[1, 1, 0] = adjs[1, 2, 0] = True  # copies of the expert
    np.testing.assert_array_equal(env(adjs, tasks, np.array([1, 2], dtype=np.uint64)), [0.0, 1.0])


def test_evaluate_constant_mask():
    agents = homogeneous_agents(3, 0.7, 0.5)
    env = SyntheticEnv(agents, RunConfig())
    tasks = generate_synthetic_tasks(20, 4, 1)
    a = evaluate(None, agents, tasks, env, 5, seed=1, constant=0.5)
    assert a == evaluate(None, agents, tasks, env, 5, seed=1, constant=0.5) and 0 <= a <= 1


@given(z=arrays(float, (5, 3), elements=st.floats(-30, 30)), a=st.floats(0, 1))
def test_masks_symmetric_and_clamped(z, a):
    md = decode_mask(z)
    ms = decode_mask(z[::-1])
    for m in (md, ms, fuse(md, ms, (a, 1 - a))):
        assert np.array_equal(m, m.T)
        assert m.min() >= 1e-6 and m.max() <= 1 - 1e-6


def test_gnn_equivariance():
    model = EibModel.init(Hyper(8, 6, 3, 4), seed=7)
    x = np.random.default_rng(2).normal(size=(5, 8))
    perm = np.array([1, 0, 2, 3, 4])
    ws, bs = model.view_params("dense")
    z = gnn_forward(template_adjacency("full", 5), x, ws, bs)
    zp = gnn_forward(template_adjacency("full", 5), x[perm], ws, bs)
    np.testing.assert_allclose(zp, z[perm], atol=1e-12)
    m, mp = decode_mask(z), decode_mask(zp)
    np.testing.assert_allclose(mp, m[np.ix_(perm, perm)], atol=1e-12)
    # the chain's only automorphism is reversal
    ws, bs = model.view_params("sparse")
    rev = np.arange(5)[::-1]
    z = gnn_forward(template_adjacency("chain", 5), x, ws, bs)
    np.testing.assert_allclose(gnn_forward(template_adjacency("chain", 5), x[rev], ws, bs), z[rev], atol=1e-12)

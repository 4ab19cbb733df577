import math

import numpy as np
import pytest

from stephrl.exceptions import ContextOverflow
from stephrl.harness import PolicyAgent, COLLECT_TEMPERATURES, rollout
from stephrl.policy import (CTX_MAX, HEADS, PolicyBundle, PolicyInput, high_input, low_input,
                            progress_input, sequence_logprobs, weighted_nll_and_grad)
from stephrl.progress import LP_MAX, SUB_MAX
from stephrl.training import TrainConfig, Trainer
from stephrl.vocab import VOCAB, Vocabulary
from stephrl.worldsim import OBS_MAX, WorldConfig, generate_tasks

OBS = ("ok", "at", "kitchen", "countertop_1", "apple_1", "fridge_1", "closed", "hold", "nothing")
SUB = ("locate", "pickup", "apple")
PROG = ("searching", "apple", "unchecked", "remain", "closed", "||", "box_1")


@pytest.fixture(scope="module")
def bundle():
    b = PolicyBundle(dim=16, critic_hidden=8, seed=3)
    rng = np.random.default_rng(0)
    # non-trivial output heads so sampling is not uniform
    for k, v in b.theta.items():
        if k.startswith("out_"):
            b.theta[k] = rng.normal(0, 0.5, v.shape)
    return b


def test_segment_layouts_are_enforced():
    with pytest.raises(ValueError):
        PolicyInput("low", (("obs", OBS), ("subtask", SUB)))
    inp = low_input(SUB, PROG, OBS)
    assert inp.tokens[0] == "<low>"
    assert inp.segment("progress") == PROG
    assert inp.tags.count("obs") == len(OBS)


def test_inputs_round_trip_through_json():
    inp = progress_input(SUB, ("goto", "kitchen"), OBS, PROG, provenance=(None, 3, 4, None))
    back = PolicyInput.from_json(inp.to_json())
    assert back.segments == inp.segments and back.head == inp.head


def test_encode_is_deterministic_and_segment_sensitive(bundle):
    inp = low_input(SUB, PROG, OBS)
    assert np.array_equal(bundle.encode(inp), bundle.encode(inp))
    a = progress_input(SUB, ("goto", "kitchen"), OBS, PROG)
    # same tokens, action and observation segments swapped
    b = PolicyInput("progress", ((("subtask", SUB)), ("action", OBS), ("obs", ("goto", "kitchen")),
                                 ("progress", PROG)))
    assert not np.allclose(bundle.encode(a), bundle.encode(b))
    assert bundle.encode(a).shape == (16,)


def test_empty_progress_encodes():
    b = PolicyBundle(dim=8, seed=0)
    h = b.encode(progress_input(SUB, ("goto", "kitchen"), OBS, ()))
    assert np.all(np.isfinite(h))


def test_context_overflow_is_an_error():
    b = PolicyBundle(dim=8, seed=0)
    long_obs = ("ok",) * (CTX_MAX + 1)
    with pytest.raises(ContextOverflow):
        b.encode(low_input(SUB, (), long_obs))


def test_worst_case_high_input_fits():
    completed = (("locate", "pickup", "new", "cellphone", "except", "cellphone_1", ";") +
                 ("place", "cellphone", "in", "garbagecan_1", ";")) * 2
    inp = high_input(("put", "two", "cellphone", "in", "garbagecan_1"), completed,
                     ("x",) * LP_MAX, ("ok",) * OBS_MAX)
    assert len(inp) <= CTX_MAX


def test_uniform_logprob_is_minus_log_vocab():
    b = PolicyBundle(dim=8, seed=0)
    lp = b.logprob(low_input(SUB, PROG, OBS), ("wait",))
    assert abs(lp + math.log(len(VOCAB))) < 1e-6


def test_logprob_equals_sum_of_teacher_forced_tokens(bundle):
    inp = low_input(SUB, PROG, OBS)
    target = ("take", "apple_1", "from", "countertop_1", "true")
    rows = bundle.teacher_forced_logits(inp, target)
    ids = VOCAB.encode(target)
    manual = sum(rows[i, t] for i, t in enumerate(ids))
    assert bundle.logprob(inp, target) == pytest.approx(manual, abs=1e-10)
    assert bundle.logprob(inp, target) <= 0.0
    assert np.allclose(np.exp(rows).sum(axis=1), 1.0, atol=1e-6)


def test_raising_target_logits_raises_logprob(bundle):
    inp = low_input(SUB, PROG, OBS)
    target = ("goto", "bedroom")
    before = bundle.logprob(inp, target)
    b = bundle.copy()
    # the output bias is shared by every position; raise it for every target token
    for tok in target:
        b.theta["out_low_b"][VOCAB.id(tok)] += 0.5
    assert b.logprob(inp, target) > before


def test_greedy_sampling_is_deterministic_and_self_consistent(bundle):
    inp = high_input(("put", "a", "apple", "in", "box_1"), (), (), OBS)
    out1 = bundle.sample(inp, 0.0)
    out2 = bundle.sample(inp, 0.0)
    assert out1.tokens == out2.tokens
    assert len(out1.tokens) <= 32
    rows = bundle.teacher_forced_logits(inp, out1.tokens)
    for i, tok in enumerate(out1.tokens):
        assert int(np.argmax(rows[i])) == VOCAB.id(tok)


def test_temperature_sampling_reproducible_from_seed(bundle):
    inp = low_input(SUB, PROG, OBS)
    a = bundle.sample(inp, 1.0, seed=5)
    b = bundle.sample(inp, 1.0, seed=5)
    assert a.tokens == b.tokens
    assert len(a.per_token_logprob) == len(a.tokens)
    with pytest.raises(ValueError):
        bundle.sample(inp, -1.0)


def test_done_flag_is_parsed_from_low_output():
    b = PolicyBundle(dim=8, seed=0)
    b.theta["out_low_b"][:] = -10.0
    b.theta["out_low_b"][VOCAB.id("true")] = 10.0
    out = b.sample(low_input(SUB, PROG, OBS), 0.0, max_tokens=1)
    assert out.done_flag is True and out.action == ()


def test_zero_initialised_critics_read_zero():
    b = PolicyBundle(dim=8, seed=0)
    for head in HEADS:
        est = b.critic_eval(head, low_input(SUB, PROG, OBS), ("wait", "false"))
        assert (est.q, est.v, est.v_target) == (0.0, 0.0, 0.0)


def test_soft_update_on_linear_heads():
    b = PolicyBundle(dim=8, critic_hidden=0, seed=0)
    inp = low_input(SUB, PROG, OBS)
    h = b.encode(inp)
    v = b.critics["low"]["v"]
    # online head outputs exactly 1.0 on this input
    v["w2"][:] = 0.0
    v["b2"][:] = 1.0
    b.soft_update(0.2, heads=("low",))
    assert b.critic_eval("low", inp).v_target == pytest.approx(0.2, abs=1e-12)
    b.soft_update(1.0)
    assert np.array_equal(b.critics["low"]["v_target"]["b2"], v["b2"])
    assert h.shape == (8,)


def test_soft_update_scalar_probe_and_contraction():
    b = PolicyBundle(dim=4, critic_hidden=3, seed=0)
    c = b.critics["high"]
    for k in c["v"]:
        c["v"][k] = np.ones_like(c["v"][k])
        c["v_target"][k] = np.zeros_like(c["v"][k])
    b.soft_update(0.2, heads=("high",))
    assert np.allclose(c["v_target"]["W1"], 0.2)
    gap = [np.abs(c["v_target"]["W1"] - 1.0).max()]
    for _ in range(5):
        b.soft_update(0.2, heads=("high",))
        gap.append(np.abs(c["v_target"]["W1"] - 1.0).max())
    ratios = np.array(gap[1:]) / np.array(gap[:-1])
    assert np.allclose(ratios, 0.8)
    with pytest.raises(ValueError):
        b.soft_update(0.0)


def test_heads_share_backbone_storage():
    b = PolicyBundle(dim=8, seed=0)
    views = [b.head_view(h) for h in HEADS]
    for k in ("emb", "enc_W", "dec_U"):
        assert views[0][k] is views[1][k] is views[2][k]
    assert "out_low_W" not in views[0]
    inp_h = high_input(("put", "a", "apple", "in", "box_1"), (), (), OBS)
    inp_p = progress_input(SUB, ("goto", "kitchen"), OBS, PROG)
    before = b.encode(inp_p).copy()
    trainer = Trainer(b, TrainConfig(bc_lr=1e-2))
    # zero-initialised output layers pass no gradient back on the very first step
    for _ in range(2):
        trainer.bc_step([inp_h], [("locate", "pickup", "apple", "<eos>")])
    assert not np.allclose(before, b.encode(inp_p))


def test_checkpoint_round_trip_and_vocab_guard(tmp_path):
    b = PolicyBundle(dim=8, seed=1)
    b.step = 17
    b.theta["out_high_b"][3] = 2.5
    path = tmp_path / "ck.npz"
    b.save(path)
    c = PolicyBundle.load(path)
    assert c.step == 17
    for k in b.theta:
        assert np.array_equal(b.theta[k], c.theta[k])
    other = Vocabulary(list(VOCAB.tokens) + ["zebra"])
    with pytest.raises(ValueError):
        PolicyBundle.load(path, vocab=other)


def test_vocabulary_save_load(tmp_path):
    VOCAB.save(tmp_path / "v.json")
    again = Vocabulary.load(tmp_path / "v.json")
    assert again.hash == VOCAB.hash
    assert VOCAB.decode(VOCAB.encode(OBS)) == OBS


def test_low_and_progress_inputs_respect_the_step_contract():
    b = PolicyBundle(dim=8, seed=0)
    agent = PolicyAgent(b, COLLECT_TEMPERATURES)
    for task in generate_tasks(WorldConfig(), "Seen", 5, 2):
        rec = rollout(agent, task, 0, "full", "learned")
        for s in rec.steps:
            # low: subtask and progress carry no step, the observation is the current one
            assert s.low_input.provenance == (None, None, s.t)
            assert s.low_input.segment("obs") == s.obs
            if s.progress_input is not None:
                assert s.progress_input.provenance == (None, s.t - 1, s.t, None)
            assert len(s.low_input) <= SUB_MAX + LP_MAX + OBS_MAX + 1


def test_critic_q_finite_over_fuzzed_rollouts():
    b = PolicyBundle(dim=8, seed=0)
    rng = np.random.default_rng(0)
    for group in b.critics.values():
        for params in group.values():
            for k in params:
                params[k] = rng.normal(0, 1, params[k].shape)
    agent = PolicyAgent(b, COLLECT_TEMPERATURES)
    for task in generate_tasks(WorldConfig(), "Seen", 100, 9):
        rec = rollout(agent, task, 1, "full", "learned", cap=3)
        s = rec.steps[0]
        q = b.critic_values("low", [s.low_input], [tuple(s.action) + ("false",)], which=("q",))
        assert np.all(np.isfinite(q["q"]))


def test_sequence_logprobs_match_loss():
    b = PolicyBundle(dim=8, seed=2)
    inputs = [low_input(SUB, PROG, OBS), high_input(("put", "a", "apple", "in", "box_1"), (), (),
                                                   OBS)]
    targets = [("wait", "false", "<eos>"), ("locate", "pickup", "apple", "<eos>")]
    seq, _ = sequence_logprobs(b.theta, inputs, targets)
    loss, _, seq2 = weighted_nll_and_grad(b.theta, inputs, targets)
    assert loss == pytest.approx(-seq.mean())
    assert np.allclose(seq, seq2)

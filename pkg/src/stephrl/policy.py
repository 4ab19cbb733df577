"""Shared-backbone sequence policy with three heads and per-head critics.

The backbone is a single-layer GRU encoder over ``token + segment`` embeddings
and a GRU decoder fed ``[previous-token embedding; encoder state]`` at every
step. The three heads (high, low, progress) share every backbone array and
differ only in their output projection. Each head owns a critic pair: a Q
head on the encoding of ``input ⊕ action`` and a V head on the encoding of
the input alone, both with soft-updated target copies.

All gradients are written out by hand; ``tests/test_gradients.py`` checks
them against central finite differences.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ContextOverflow
from .progress import LP_MAX
from .vocab import DONE_FALSE, DONE_TRUE, EOS, HEAD_PROMPTS, VOCAB, Vocabulary

CTX_MAX = 192
HEADS = ("high", "low", "progress")
HEAD_BUDGET = {"high": 32, "low": 32, "progress": LP_MAX + 1}
SEGMENT_TAGS = ("prompt", "instruction", "completed", "subtask", "progress", "action", "obs", "answer")
SEG_INDEX = {tag: i for i, tag in enumerate(SEGMENT_TAGS)}

# allowed segment layouts per head (full, w/o local progress, flat)
LAYOUTS = {
    "high": {("instruction", "completed", "progress", "obs"), ("instruction", "completed", "obs")},
    "low": {("subtask", "progress", "obs"), ("subtask", "obs"), ("instruction", "progress", "obs")},
    "progress": {("subtask", "action", "obs", "progress"), ("instruction", "action", "obs", "progress")},
}

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyInput:
    head: str
    segments: tuple  # ((tag, tokens), ...)
    provenance: tuple = ()  # per segment: env step the content came from, None for summaries

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head}")
        layout = tuple(tag for tag, _ in self.segments)
        if layout not in LAYOUTS[self.head]:
            raise ValueError(f"segment layout {layout} not allowed for head {self.head}")

    @property
    def tokens(self) -> tuple:
        out = [HEAD_PROMPTS[self.head]]
        for _, toks in self.segments:
            out.extend(toks)
        return tuple(out)

    @property
    def tags(self) -> tuple:
        out = ["prompt"]
        for tag, toks in self.segments:
            out.extend([tag] * len(toks))
        return tuple(out)

    def __len__(self):
        return 1 + sum(len(t) for _, t in self.segments)

    def segment(self, tag: str) -> tuple:
        for name, toks in self.segments:
            if name == tag:
                return tuple(toks)
        raise KeyError(tag)

    def to_json(self, vocab: Vocabulary = VOCAB) -> dict:
        return {"head": self.head,
                "segments": [[tag, vocab.encode(toks)] for tag, toks in self.segments],
                "provenance": list(self.provenance)}

    @classmethod
    def from_json(cls, row: dict, vocab: Vocabulary = VOCAB) -> "PolicyInput":
        segs = tuple((tag, vocab.decode(ids)) for tag, ids in row["segments"])
        return cls(row["head"], segs, tuple(row.get("provenance", ())))


def high_input(instruction, completed, last_progress, obs, provenance=()) -> PolicyInput:
    segs = [("instruction", tuple(instruction)), ("completed", tuple(completed))]
    if last_progress is not None:
        segs.append(("progress", tuple(last_progress)))
    segs.append(("obs", tuple(obs)))
    return PolicyInput("high", tuple(segs), tuple(provenance))


def low_input(subtask, progress, obs, provenance=(), instruction=None) -> PolicyInput:
    """Low-level input; pass ``instruction`` instead of ``subtask`` for the flat variant."""
    first = ("instruction", tuple(instruction)) if instruction is not None else ("subtask", tuple(subtask))
    segs = [first]
    if progress is not None:
        segs.append(("progress", tuple(progress)))
    segs.append(("obs", tuple(obs)))
    return PolicyInput("low", tuple(segs), tuple(provenance))


def progress_input(subtask, prev_action, obs, prev_progress, provenance=(), instruction=None) -> PolicyInput:
    first = ("instruction", tuple(instruction)) if instruction is not None else ("subtask", tuple(subtask))
    segs = (first, ("action", tuple(prev_action)), ("obs", tuple(obs)), ("progress", tuple(prev_progress)))
    return PolicyInput("progress", segs, tuple(provenance))


@dataclass
class PolicyOutput:
    tokens: tuple
    per_token_logprob: list
    done_flag: Optional[bool] = None

    @property
    def action(self) -> tuple:
        """Low-head output without its trailing termination token."""
        if self.done_flag is None:
            return self.tokens
        return self.tokens[:-1]


@dataclass
class ValueEstimate:
    q: float
    v: float
    v_target: float


# --------------------------------------------------------------------------
# numerics


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def gru_step(a, h, U, m):
    """One masked GRU step given the input projection ``a = x @ W + b``."""
    d = h.shape[1]
    hu = h @ U[:, : 2 * d]
    z = _sigmoid(a[:, :d] + hu[:, :d])
    r = _sigmoid(a[:, d: 2 * d] + hu[:, d:])
    rh = r * h
    n = np.tanh(a[:, 2 * d:] + rh @ U[:, 2 * d:])
    hn = (1.0 - z) * n + z * h
    out = m * hn + (1.0 - m) * h
    return out, (h, z, r, n, rh, m)


def gru_step_backward(dout, cache, U, gU):
    """Returns the gradients with respect to ``a`` and the previous hidden state."""
    h, z, r, n, rh, m = cache
    d = h.shape[1]
    dhn = dout * m
    dh = dout * (1.0 - m)
    dz = dhn * (h - n)
    dn = dhn * (1.0 - z)
    dh += dhn * z
    dan = dn * (1.0 - n * n)
    gU[:, 2 * d:] += rh.T @ dan
    drh = dan @ U[:, 2 * d:].T
    dr = drh * h
    dh += drh * r
    dzr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
    gU[:, : 2 * d] += h.T @ dzr
    dh += dzr @ U[:, : 2 * d].T
    return np.concatenate([dzr, dan], axis=1), dh


def gru_forward(x, h, W, U, b, m):
    return gru_step(x @ W + b, h, U, m)


def mlp_forward(params, H):
    if "W1" in params:
        a = np.tanh(H @ params["W1"] + params["b1"])
        return (a @ params["w2"])[:, 0] + params["b2"][0], (H, a)
    return (H @ params["w2"])[:, 0] + params["b2"][0], (H, None)


def mlp_backward(params, dout, cache):
    """Gradients of ``sum(dout * out)`` with respect to the MLP parameters."""
    H, a = cache
    g = {}
    dcol = dout[:, None]
    g["b2"] = np.array([dout.sum()])
    if a is None:
        g["w2"] = H.T @ dcol
        return g
    g["w2"] = a.T @ dcol
    da = (dcol @ params["w2"].T) * (1.0 - a * a)
    g["W1"] = H.T @ da
    g["b1"] = da.sum(axis=0)
    return g


# --------------------------------------------------------------------------
# batching


@dataclass
class EncodedBatch:
    ids: np.ndarray
    segs: np.ndarray
    mask: np.ndarray


def batch_inputs(inputs: Sequence[PolicyInput], vocab: Vocabulary = VOCAB,
                 answers: Optional[Sequence] = None, dtype=np.float64) -> EncodedBatch:
    """Right-padded id/segment arrays; ``answers`` appends an action segment (Q inputs)."""
    rows_ids, rows_segs = [], []
    for i, inp in enumerate(inputs):
        toks, tags = list(inp.tokens), list(inp.tags)
        if answers is not None:
            toks += list(answers[i])
            tags += ["answer"] * len(answers[i])
        if len(toks) > CTX_MAX + (0 if answers is None else HEAD_BUDGET[inp.head]):
            raise ContextOverflow(f"input of {len(toks)} tokens exceeds CTX_MAX={CTX_MAX}")
        rows_ids.append(vocab.encode(toks))
        rows_segs.append([SEG_INDEX[t] for t in tags])
    T = max(len(r) for r in rows_ids)
    B = len(rows_ids)
    ids = np.full((B, T), vocab.pad_id, dtype=np.int64)
    segs = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=dtype)
    for i, (r, s) in enumerate(zip(rows_ids, rows_segs)):
        ids[i, : len(r)] = r
        segs[i, : len(s)] = s
        mask[i, : len(r)] = 1.0
    return EncodedBatch(ids, segs, mask)


def batch_targets(targets: Sequence[Sequence[str]], vocab: Vocabulary = VOCAB, dtype=np.float64):
    rows = [vocab.encode(t) for t in targets]
    L = max(max(len(r) for r in rows), 1)
    B = len(rows)
    out = np.full((B, L), vocab.pad_id, dtype=np.int64)
    prev = np.full((B, L), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((B, L), dtype=dtype)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
        prev[i, 0] = vocab.bos_id
        prev[i, 1: len(r)] = r[:-1]
        mask[i, : len(r)] = 1.0
    return out, prev, mask


# --------------------------------------------------------------------------
# backbone forward / backward on a parameter dict


def _scatter_rows(target, idx, rows):
    """``target[idx[i]] += rows[i]`` with repeats, as a one-hot product."""
    onehot = np.zeros((len(idx), target.shape[0]), dtype=rows.dtype)
    onehot[np.arange(len(idx)), idx] = 1.0
    target += onehot.T @ rows


def encoder_forward(theta, batch: EncodedBatch):
    B, T = batch.ids.shape
    d = theta["enc_U"].shape[0]
    X = theta["emb"][batch.ids.T] + theta["seg_emb"][batch.segs.T]  # (T, B, d)
    # input projections for every position in one product
    A = X @ theta["enc_W"] + theta["enc_b"]
    h = np.zeros((B, d), dtype=theta["enc_U"].dtype)
    caches = []
    for t in range(T):
        h, c = gru_step(A[t], h, theta["enc_U"], batch.mask[:, t: t + 1])
        caches.append(c)
    return h, (X, caches)


def encoder_backward(theta, dH, batch: EncodedBatch, cache, grads):
    X, caches = cache
    T, B, d = X.shape
    dA = np.empty((T, B, 3 * d), dtype=dH.dtype)
    dh = dH
    for t in range(T - 1, -1, -1):
        dA[t], dh = gru_step_backward(dh, caches[t], theta["enc_U"], grads["enc_U"])
    flat_dA = dA.reshape(-1, 3 * d)
    grads["enc_W"] += X.reshape(-1, d).T @ flat_dA
    grads["enc_b"] += flat_dA.sum(axis=0)
    dX = flat_dA @ theta["enc_W"].T
    # one scatter over all positions is much cheaper than one per step
    _scatter_rows(grads["emb"], batch.ids.T.reshape(-1), dX)
    _scatter_rows(grads["seg_emb"], batch.segs.T.reshape(-1), dX)


def decoder_forward(theta, H, heads: Sequence[str], prev, mask):
    """Teacher-forced decoding; returns per-position log-softmax and caches."""
    B, L = prev.shape
    E = theta["emb"].shape[1]
    W = theta["dec_W"]
    # the encoder state feeds every step, so its projection is computed once
    A = theta["emb"][prev.T] @ W[:E] + (H @ W[E:] + theta["dec_b"])
    h = H
    head_rows = {hd: np.flatnonzero(np.asarray(heads) == hd) for hd in set(heads)}
    logps, caches = [], []
    for t in range(L):
        h, c = gru_step(A[t], h, theta["dec_U"], mask[:, t: t + 1])
        logits = np.empty((B, theta["emb"].shape[0]), dtype=h.dtype)
        for hd, rows in head_rows.items():
            logits[rows] = h[rows] @ theta[f"out_{hd}_W"] + theta[f"out_{hd}_b"]
        logps.append(_log_softmax(logits))
        caches.append((c, h))
    return logps, caches, head_rows


def decoder_backward(theta, coeff, targets, prev, logps, caches, head_rows, grads):
    """Backprop ``sum_{b,t} coeff[b,t] * log p(target[b,t])`` into ``grads``.

    Returns the gradient with respect to the encoder state.
    """
    B, L = prev.shape
    d = theta["dec_U"].shape[0]
    E = theta["emb"].shape[1]
    dh = np.zeros((B, d), dtype=theta["dec_U"].dtype)
    dA = np.empty((L, B, 3 * d), dtype=dh.dtype)
    rows_b = np.arange(B)
    for t in range(L - 1, -1, -1):
        c, h = caches[t]
        p = np.exp(logps[t])
        dlogits = -p * coeff[:, t: t + 1]
        dlogits[rows_b, targets[:, t]] += coeff[:, t]
        for hd, rows in head_rows.items():
            grads[f"out_{hd}_W"] += h[rows].T @ dlogits[rows]
            grads[f"out_{hd}_b"] += dlogits[rows].sum(axis=0)
            dh[rows] += dlogits[rows] @ theta[f"out_{hd}_W"].T
        dA[t], dh = gru_step_backward(dh, c, theta["dec_U"], grads["dec_U"])
    W = theta["dec_W"]
    Xp = theta["emb"][prev.T].reshape(-1, E)
    flat_dA = dA.reshape(-1, 3 * d)
    grads["dec_W"][:E] += Xp.T @ flat_dA
    dA_sum = dA.sum(axis=0)  # (B, 3d): the encoder-state input is the same at every step
    H = caches[0][0][0]  # initial decoder state is the encoder state
    grads["dec_W"][E:] += H.T @ dA_sum
    grads["dec_b"] += dA_sum.sum(axis=0)
    _scatter_rows(grads["emb"], prev.T.reshape(-1), flat_dA @ W[:E].T)
    return dA_sum @ W[E:].T + dh


def sequence_logprobs(theta, inputs, targets, vocab: Vocabulary = VOCAB):
    """Per-sample autoregressive log-likelihood and per-token log-probs."""
    dt = theta["enc_U"].dtype
    batch = batch_inputs(inputs, vocab, dtype=dt)
    H, _ = encoder_forward(theta, batch)
    out, prev, tmask = batch_targets(targets, vocab, dtype=dt)
    logps, _, _ = decoder_forward(theta, H, [i.head for i in inputs], prev, tmask)
    tok = np.stack([logps[t][np.arange(len(inputs)), out[:, t]] for t in range(out.shape[1])], axis=1)
    tok = tok * tmask
    return tok.sum(axis=1), tok


def weighted_nll_and_grad(theta, inputs, targets, weights=None, vocab: Vocabulary = VOCAB):
    """``-mean_b(w_b * log pi(u_b | s_b))`` and its gradient over every theta array.

    BC passes ``weights=None`` (all ones); AWR passes the advantage weights,
    treated as constants.
    """
    B = len(inputs)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
    dt = theta["enc_U"].dtype
    batch = batch_inputs(inputs, vocab, dtype=dt)
    H, enc_caches = encoder_forward(theta, batch)
    out, prev, tmask = batch_targets(targets, vocab, dtype=dt)
    heads = [i.head for i in inputs]
    logps, dec_caches, head_rows = decoder_forward(theta, H, heads, prev, tmask)
    tok = np.stack([logps[t][np.arange(B), out[:, t]] for t in range(out.shape[1])], axis=1) * tmask
    seq = tok.sum(axis=1)
    loss = -float(np.mean(w * seq))
    grads = {k: np.zeros_like(v) for k, v in theta.items()}
    coeff = (-(w / B)[:, None] * tmask).astype(dt)
    dH = decoder_backward(theta, coeff, out, prev, logps, dec_caches, head_rows, grads)
    encoder_backward(theta, dH, batch, enc_caches, grads)
    return loss, grads, seq


# --------------------------------------------------------------------------
# bundle


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _recurrent(rng, d):
    blocks = []
    for _ in range(3):
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        blocks.append(q)
    return np.concatenate(blocks, axis=1)


def _gate_bias(d, value):
    # a positive update-gate bias starts the cell close to "keep the state",
    # which helps the encoder carry object/receptacle bindings to the end
    b = np.zeros(3 * d)
    b[:d] = value
    return b


def init_critic(rng, d, hidden):
    if hidden:
        return {"W1": _glorot(rng, d, hidden), "b1": np.zeros(hidden),
                "w2": np.zeros((hidden, 1)), "b2": np.zeros(1)}
    return {"w2": np.zeros((d, 1)), "b2": np.zeros(1)}


class PolicyBundle:
    """Shared backbone ``theta`` plus one critic set per head.

    ``critics[head]`` holds four parameter dicts: ``q``, ``q_target``, ``v``
    and ``v_target``. Target dicts change only through ``soft_update``.
    """

    def __init__(self, dim: int = 64, critic_hidden: int = 64, seed: int = 0,
                 vocab: Vocabulary = VOCAB, emb_scale: float = 0.3, dtype="float64",
                 gate_bias: float = 1.0):
        self.vocab = vocab
        self.dim = dim
        self.critic_hidden = critic_hidden
        self.seed = seed
        self.step = 0
        rng = np.random.default_rng(seed)
        V, d = len(vocab), dim
        theta = {
            "emb": rng.normal(0.0, emb_scale, (V, d)),
            "seg_emb": rng.normal(0.0, emb_scale, (len(SEGMENT_TAGS), d)),
            "enc_W": _glorot(rng, d, 3 * d),
            "enc_U": _recurrent(rng, d),
            "enc_b": _gate_bias(d, gate_bias),
            "dec_W": _glorot(rng, 2 * d, 3 * d),
            "dec_U": _recurrent(rng, d),
            "dec_b": _gate_bias(d, gate_bias),
        }
        for hd in HEADS:
            theta[f"out_{hd}_W"] = np.zeros((d, V))
            theta[f"out_{hd}_b"] = np.zeros(V)
        # critics stay in double precision; only the backbone follows ``dtype``
        self.theta = {k: v.astype(dtype) for k, v in theta.items()}
        self.critics = {}
        for hd in HEADS:
            q = init_critic(rng, d, critic_hidden)
            v = init_critic(rng, d, critic_hidden)
            self.critics[hd] = {"q": q, "q_target": copy.deepcopy(q),
                                "v": v, "v_target": copy.deepcopy(v)}

    # -- shared-parameter views -------------------------------------------------

    def head_view(self, head: str) -> dict:
        """Parameters the given head reads; backbone arrays are the same objects."""
        keys = [k for k in self.theta if not k.startswith("out_") or k.startswith(f"out_{head}_")]
        return {k: self.theta[k] for k in keys}

    @property
    def dtype(self):
        return self.theta["enc_U"].dtype

    def copy(self) -> "PolicyBundle":
        return copy.deepcopy(self)

    # -- inference ---------------------------------------------------------------

    def encode(self, inp: PolicyInput) -> np.ndarray:
        if len(inp) > CTX_MAX:
            raise ContextOverflow(f"input of {len(inp)} tokens exceeds CTX_MAX={CTX_MAX}")
        H, _ = encoder_forward(self.theta, batch_inputs([inp], self.vocab, dtype=self.dtype))
        return H[0]

    def encode_batch(self, inputs: Sequence[PolicyInput], answers=None) -> np.ndarray:
        H, _ = encoder_forward(self.theta, batch_inputs(inputs, self.vocab, answers, self.dtype))
        return H

    def logprob(self, inp: PolicyInput, target: Sequence[str]) -> float:
        seq, _ = sequence_logprobs(self.theta, [inp], [tuple(target)], self.vocab)
        return float(seq[0])

    def token_logprobs(self, inp: PolicyInput, target: Sequence[str]) -> np.ndarray:
        _, tok = sequence_logprobs(self.theta, [inp], [tuple(target)], self.vocab)
        return tok[0, : len(target)]

    def teacher_forced_logits(self, inp: PolicyInput, target: Sequence[str]) -> np.ndarray:
        """Per-position log-softmax rows (L x V) under teacher forcing."""
        batch = batch_inputs([inp], self.vocab)
        H, _ = encoder_forward(self.theta, batch)
        out, prev, tmask = batch_targets([tuple(target)], self.vocab)
        logps, _, _ = decoder_forward(self.theta, H, [inp.head], prev, tmask)
        return np.stack([lp[0] for lp in logps])

    def sample(self, inp: PolicyInput, temperature: float = 0.0, seed=None,
               rng: Optional[np.random.Generator] = None, max_tokens: Optional[int] = None) -> PolicyOutput:
        """Greedy decoding at temperature 0 (ties go to the lowest id), else softmax sampling."""
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        if rng is None and temperature > 0:
            rng = np.random.default_rng(seed)
        th = self.theta
        H = self.encode(inp)[None, :]
        h = H
        one = np.ones((1, 1), dtype=self.dtype)
        W, b = th[f"out_{inp.head}_W"], th[f"out_{inp.head}_b"]
        budget = max_tokens or HEAD_BUDGET[inp.head]
        prev = self.vocab.bos_id
        eos = self.vocab.eos_id
        ids, lps = [], []
        for _ in range(budget):
            x = np.concatenate([th["emb"][prev][None, :], H], axis=1)
            h, _ = gru_forward(x, h, th["dec_W"], th["dec_U"], th["dec_b"], one)
            logits = (h @ W + b)[0]
            logp = _log_softmax(logits)
            if temperature == 0:
                tok = int(np.argmax(logits))
            else:
                scaled = _log_softmax(logits / temperature)
                tok = int(rng.choice(len(logits), p=np.exp(scaled)))
            if tok == eos:
                break
            ids.append(tok)
            lps.append(float(logp[tok]))
            prev = tok
        tokens = self.vocab.decode(ids)
        flag = None
        if inp.head == "low" and tokens and tokens[-1] in (DONE_TRUE, DONE_FALSE):
            flag = tokens[-1] == DONE_TRUE
        return PolicyOutput(tokens, lps, flag)

    # -- critics -----------------------------------------------------------------

    def critic_values(self, head: str, inputs, answers=None, which=("q", "v", "v_target")):
        out = {}
        need_sa = any(w.startswith("q") for w in which)
        Hs = self.encode_batch(inputs)
        Hsa = self.encode_batch(inputs, answers) if need_sa else None
        for w in which:
            H = Hsa if w.startswith("q") else Hs
            out[w], _ = mlp_forward(self.critics[head][w], H)
        return out

    def critic_eval(self, head: str, inp: PolicyInput, action_tokens=None) -> ValueEstimate:
        answers = [tuple(action_tokens or ())]
        vals = self.critic_values(head, [inp], answers)
        return ValueEstimate(float(vals["q"][0]), float(vals["v"][0]), float(vals["v_target"][0]))

    def soft_update(self, rate: float, heads: Sequence[str] = HEADS) -> None:
        """target <- (1 - rate) * target + rate * online, for both Q and V."""
        if not 0.0 < rate <= 1.0:
            raise ValueError("rate must be in (0, 1]")
        for hd in heads:
            c = self.critics[hd]
            for online, target in (("q", "q_target"), ("v", "v_target")):
                for k, val in c[online].items():
                    if rate == 1.0:
                        c[target][k] = val.copy()
                    else:
                        c[target][k] = (1.0 - rate) * c[target][k] + rate * val

    # -- persistence -------------------------------------------------------------

    def state_dict(self) -> dict:
        arrays = {f"theta/{k}": v for k, v in self.theta.items()}
        for hd, group in self.critics.items():
            for name, params in group.items():
                for k, v in params.items():
                    arrays[f"critic/{hd}/{name}/{k}"] = v
        return arrays

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "vocab_hash": self.vocab.hash, "step": self.step,
                "dim": self.dim, "critic_hidden": self.critic_hidden, "seed": self.seed}
        arrays = self.state_dict()
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path, vocab: Vocabulary = VOCAB) -> "PolicyBundle":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta["vocab_hash"] != vocab.hash:
                raise ValueError(
                    f"checkpoint vocabulary {meta['vocab_hash']} does not match {vocab.hash}")
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            bundle = cls(meta["dim"], meta["critic_hidden"], meta["seed"], vocab)
            bundle.step = meta["step"]
            for key in data.files:
                if key == "__meta__":
                    continue
                parts = key.split("/")
                if parts[0] == "theta":
                    bundle.theta[parts[1]] = data[key].copy()
                else:
                    bundle.critics[parts[1]][parts[2]][parts[3]] = data[key].copy()
        return bundle


def done_token(flag: bool) -> str:
    return DONE_TRUE if flag else DONE_FALSE


def with_eos(tokens: Sequence[str]) -> tuple:
    return tuple(tokens) + (EOS,)

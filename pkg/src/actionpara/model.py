"""Encoder-decoder attention model with action-embedding fusion, plus beam search."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .actions import Action, TrainingTriple
from .text_prep import CLS_ID, PAD_ID, SEP_ID, TokenSeq


class FusionMode(str, enum.Enum):
    SUM_ALL = "SumAll"
    CONCAT_WITH_POS = "ConcatWithPos"
    CONCAT_LITERAL = "ConcatLiteral"

    @property
    def segments(self) -> int:
        return {"SumAll": 1, "ConcatWithPos": 2, "ConcatLiteral": 3}[self.value]


DTYPES = {"f32": torch.float32, "f64": torch.float64}


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    action_vocab_size: int = 3
    max_positions: int = 32
    dropout_rate: float = 0.1
    fusion_mode: str = FusionMode.CONCAT_WITH_POS.value
    precision: str = "f32"
    positional: str = "learned"  # or "sinusoidal"

    def validate(self, max_len: int | None = None) -> None:
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.action_vocab_size != 3:
            raise ValueError("action_vocab_size must be 3 (K, P, O)")
        if max_len is not None and self.max_positions < max_len + 2:
            raise ValueError(f"max_positions={self.max_positions} < max_len + 2 = {max_len + 2}")
        FusionMode(self.fusion_mode)
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")
        if self.positional not in ("learned", "sinusoidal"):
            raise ValueError(f"unknown positional scheme {self.positional!r}")
        if min(self.d_model, self.enc_layers, self.dec_layers, self.d_ff, self.vocab_size) < 1:
            raise ValueError("model sizes must be positive")

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderInput:
    tokens: torch.Tensor  # [B, m] long
    actions: torch.Tensor  # [B, m] long
    pad_mask: torch.Tensor  # [B, m] bool, True on PAD

    @classmethod
    def from_seqs(cls, xs: Sequence[TokenSeq], acts: Sequence[Sequence[Action]]) -> "EncoderInput":
        m = max(len(x) for x in xs)
        tokens = torch.full((len(xs), m), PAD_ID, dtype=torch.long)
        # padded positions reuse K; the padding mask hides them
        actions = torch.full((len(xs), m), int(Action.K), dtype=torch.long)
        for i, (x, a) in enumerate(zip(xs, acts)):
            if len(a) != len(x):
                raise ValueError(f"row {i}: {len(a)} actions for {len(x)} tokens")
            tokens[i, : len(x)] = torch.tensor(x.ids, dtype=torch.long)
            actions[i, : len(x)] = torch.tensor([int(v) for v in a], dtype=torch.long)
        return cls(tokens, actions, tokens.eq(PAD_ID))


def _sinusoid(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    table = torch.zeros(n, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, query, key, key_pad_mask=None, causal=False, dropout=0.0):
        B, Tq, D = query.shape
        Tk = key.shape[1]
        h, dh = self.n_heads, D // self.n_heads
        q = self.q(query).view(B, Tq, h, dh).transpose(1, 2)
        k = self.k(key).view(B, Tk, h, dh).transpose(1, 2)
        v = self.v(key).view(B, Tk, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if key_pad_mask is not None:
            scores = scores.masked_fill(key_pad_mask[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(Tq, Tk, dtype=torch.bool, device=query.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        attn = F.dropout(weights, dropout, self.training) if dropout else weights
        out = (attn @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.o(out), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x, dropout=0.0):
        hidden = F.gelu(self.fc1(x))
        if dropout:
            hidden = F.dropout(hidden, dropout, self.training)
        return self.fc2(hidden)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, x, pad_mask, dropout):
        a, w = self.attn(self.ln1(x), self.ln1(x), pad_mask, dropout=dropout)
        x = x + a
        x = x + self.ff(self.ln2(x), dropout)
        return x, w


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, y, memory, mem_mask, dropout):
        h = self.ln1(y)
        a, _ = self.self_attn(h, h, None, causal=True, dropout=dropout)
        y = y + a
        c, w = self.cross_attn(self.ln2(y), memory, mem_mask, dropout=dropout)
        y = y + c
        y = y + self.ff(self.ln3(y), dropout)
        return y, w


class ActionTransformer(nn.Module):
    """Pre-norm encoder-decoder. Parameter names are stable and used by checkpoints."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.d_model
        self.word_emb = nn.Parameter(torch.empty(cfg.vocab_size, d))
        if cfg.positional == "learned":
            self.pos_emb = nn.Parameter(torch.empty(cfg.max_positions, d))
        else:
            self.register_buffer("pos_emb", _sinusoid(cfg.max_positions, d).float(), persistent=False)
        self.act_emb = nn.Parameter(torch.empty(cfg.action_vocab_size, d))
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Parameter(torch.empty(d, cfg.vocab_size))
        self.to(cfg.dtype)

    @property
    def dropout(self) -> float:
        return self.cfg.dropout_rate if self.training else 0.0

    # -- encoder side -------------------------------------------------------

    def fuse(self, inp: EncoderInput, mode: FusionMode | str | None = None):
        mode = FusionMode(mode or self.cfg.fusion_mode)
        m = inp.tokens.shape[1]
        if m > self.cfg.max_positions:
            raise ValueError(f"source length {m} exceeds max_positions={self.cfg.max_positions}")
        word = self.word_emb[inp.tokens]
        pos = self.pos_emb[:m].to(word.dtype).expand_as(word)
        act = self.act_emb[inp.actions]
        if mode is FusionMode.SUM_ALL:
            states = word + pos + act
        elif mode is FusionMode.CONCAT_WITH_POS:
            states = torch.cat([word + pos, act + pos], dim=1)
        else:
            states = torch.cat([word, pos, act], dim=1)
        mask = inp.pad_mask.repeat(1, mode.segments)
        return states, mask

    def encode(self, states: torch.Tensor, mask: torch.Tensor, return_attn: bool = False):
        if not torch.isfinite(states).all():
            raise FloatingPointError("non-finite fused input states")
        x, weights = states, []
        for i, layer in enumerate(self.encoder):
            x, w = layer(x, mask, self.dropout)
            if not torch.isfinite(x).all():
                raise FloatingPointError(f"non-finite activations in encoder layer {i}")
            weights.append(w)
        memory = self.enc_norm(x)
        return (memory, weights) if return_attn else memory

    # -- decoder side -------------------------------------------------------

    def decode(self, prefix: torch.Tensor, memory: torch.Tensor, mem_mask: torch.Tensor, return_attn=False):
        t = prefix.shape[1]
        if t > self.cfg.max_positions:
            raise ValueError(f"decoder prefix length {t} exceeds max_positions={self.cfg.max_positions}")
        y = self.word_emb[prefix] + self.pos_emb[:t].to(memory.dtype)
        cross = []
        for layer in self.decoder:
            y, w = layer(y, memory, mem_mask, self.dropout)
            cross.append(w)
        logits = self.dec_norm(y) @ self.out_proj
        return (logits, cross) if return_attn else logits

    def forward(self, inp: EncoderInput, prefix: torch.Tensor):
        states, mask = self.fuse(inp)
        memory = self.encode(states, mask)
        return self.decode(prefix, memory, mask)


def init_params(cfg: ModelConfig, seed: int = 0) -> ActionTransformer:
    """Normal(0, 1/sqrt(d_model)) weights, zero biases, unit layer-norm gains."""
    cfg.validate()
    model = ActionTransformer(cfg)
    gen = torch.Generator().manual_seed(seed)
    std = 1.0 / math.sqrt(cfg.d_model)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if ".ln" in name or name.startswith(("enc_norm", "dec_norm")):
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64).to(p.dtype) * std)
    return model


# -- functional surface --------------------------------------------------------


def fuse_embeddings(inp: EncoderInput, model: ActionTransformer, mode=None):
    return model.fuse(inp, mode)


def encode_seq(states, mask, model: ActionTransformer, return_attn=False):
    return model.encode(states, mask, return_attn)


def decode_logits(prefix, memory, mask, model: ActionTransformer, return_attn=False):
    return model.decode(prefix, memory, mask, return_attn)


@dataclass
class Batch:
    enc: EncoderInput
    tgt_in: torch.Tensor  # [B, t]: CLS + target[:-1]
    tgt_out: torch.Tensor  # [B, t]: target, PAD-filled


def make_batch(triples: Sequence[TrainingTriple]) -> Batch:
    if not triples:
        raise ValueError("empty batch")
    enc = EncoderInput.from_seqs([t.x for t in triples], [t.a for t in triples])
    t = max(len(tr.y) for tr in triples)
    tgt_in = torch.full((len(triples), t), PAD_ID, dtype=torch.long)
    tgt_out = torch.full((len(triples), t), PAD_ID, dtype=torch.long)
    for i, tr in enumerate(triples):
        ids = list(tr.y.ids)
        tgt_out[i, : len(ids)] = torch.tensor(ids)
        tgt_in[i, : len(ids)] = torch.tensor([CLS_ID] + ids[:-1])
    return Batch(enc, tgt_in, tgt_out)


def batch_loss(model: ActionTransformer, batch: Batch, reduction: str = "mean") -> torch.Tensor:
    logits = model(batch.enc, batch.tgt_in)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        batch.tgt_out.reshape(-1),
        ignore_index=PAD_ID,
        reduction=reduction,
    )


def loss_and_grads(batch: Batch | Sequence[TrainingTriple], model: ActionTransformer):
    """Mean token cross-entropy over non-PAD targets and a gradient for every parameter."""
    if not isinstance(batch, Batch):
        batch = make_batch(batch)
    model.zero_grad(set_to_none=False)
    loss = batch_loss(model, batch)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return float(loss.item()), grads


# -- beam search -------------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]  # generated tokens, without the start symbol
    score: float  # sum log-prob / len(ids)
    logprob: float
    finished_at: int


StepFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def beam_search_many(
    step: StepFn, n_items: int, beams: int, max_gen_len: int, bos: int = CLS_ID, eos: int = SEP_ID
) -> list[Hypothesis]:
    """Length-normalized beam search over ``n_items`` independent inputs.

    ``step(item_idx, prefixes)`` returns next-token log-probabilities, one row
    per prefix; ``item_idx[r]`` says which input prefix ``r`` belongs to.
    A hypothesis ends at ``eos`` or after ``max_gen_len`` generated tokens;
    search for an item stops once ``beams`` hypotheses have finished.
    """
    if beams < 1:
        raise ValueError("beams must be >= 1")
    if max_gen_len < 1:
        raise ValueError("max_gen_len must be >= 1")
    live: list[list[tuple[tuple[int, ...], float]]] = [[((bos,), 0.0)] for _ in range(n_items)]
    finished: list[list[Hypothesis]] = [[] for _ in range(n_items)]
    for t in range(1, max_gen_len + 1):
        rows = [(i, ids, s) for i in range(n_items) for ids, s in live[i]]
        if not rows:
            break
        item_idx = np.array([r[0] for r in rows])
        prefixes = np.array([r[1] for r in rows], dtype=np.int64)
        logp = np.asarray(step(item_idx, prefixes), dtype=np.float64)
        k = min(beams, logp.shape[1])
        top = np.argsort(-logp, axis=1, kind="stable")[:, :k]
        cands: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in range(n_items)]
        for r, (i, ids, s) in enumerate(rows):
            for tok in top[r]:
                cands[i].append((s + float(logp[r, tok]), ids + (int(tok),)))
        for i in range(n_items):
            if not cands[i]:
                continue
            cands[i].sort(key=lambda c: (-c[0], c[1]))
            nxt = []
            for total, ids in cands[i][: 2 * beams]:
                if ids[-1] == eos or t == max_gen_len:
                    finished[i].append(Hypothesis(ids[1:], total / t, total, t))
                elif len(nxt) < beams:
                    nxt.append((ids, total))
            live[i] = [] if len(finished[i]) >= beams else nxt
    return [min(f, key=lambda h: (-h.score, h.finished_at, h.ids)) for f in finished]


def beam_search_batch(
    model: ActionTransformer,
    xs: Sequence[TokenSeq],
    acts: Sequence[Sequence[Action]],
    beams: int = 8,
    max_gen_len: int | None = None,
) -> list[Hypothesis]:
    if max_gen_len is None:
        max_gen_len = model.cfg.max_positions - 1
    max_gen_len = min(max_gen_len, model.cfg.max_positions)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            inp = EncoderInput.from_seqs(xs, acts)
            states, mask = model.fuse(inp)
            memory = model.encode(states, mask)

            def step(item_idx, prefixes):
                idx = torch.from_numpy(item_idx)
                logits = model.decode(torch.from_numpy(prefixes), memory[idx], mask[idx])
                return torch.log_softmax(logits[:, -1].double(), dim=-1).numpy()

            return beam_search_many(step, len(xs), beams, max_gen_len)
    finally:
        model.train(was_training)


def beam_search(
    x: TokenSeq, a: Sequence[Action], model: ActionTransformer, beams: int = 8, max_gen_len: int | None = None
) -> Hypothesis:
    return beam_search_batch(model, [x], [a], beams, max_gen_len)[0]


def greedy_decode(model: ActionTransformer, x: TokenSeq, a: Sequence[Action], max_gen_len: int) -> tuple[int, ...]:
    """Plain argmax decoding, used as an independent check on ``beams=1``."""
    model.eval()
    with torch.no_grad():
        states, mask = model.fuse(EncoderInput.from_seqs([x], [a]))
        memory = model.encode(states, mask)
        prefix = [CLS_ID]
        for _ in range(max_gen_len):
            logits = model.decode(torch.tensor([prefix]), memory, mask)
            tok = int(torch.argmax(logits[0, -1]))
            prefix.append(tok)
            if tok == SEP_ID:
                break
    return tuple(prefix[1:])

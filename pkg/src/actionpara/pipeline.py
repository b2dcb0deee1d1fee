"""A trained model bundled with its vocabulary and text settings."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .actions import Action, ActionSeq, Mode, actions_for_mode, format_actions, wrap_content_actions
from .model import ActionTransformer, Hypothesis, beam_search_batch
from .text_prep import DEFAULT_MAX_LEN, NormalizeConfig, TokenSeq, Vocab, decode, encode, encode_target, normalize


def text_extra(norm: NormalizeConfig, max_len: int) -> dict:
    return {"text": {"normalize": asdict(norm), "max_len": max_len}}


@dataclass
class Generation:
    paraphrase: str
    tokens: tuple[str, ...]  # source content tokens
    used_actions: ActionSeq  # including [CLS] and [SEP]
    score: float

    @property
    def used_actions_str(self) -> str:
        return format_actions(self.used_actions)


@dataclass
class Paraphraser:
    model: ActionTransformer
    vocab: Vocab
    norm: NormalizeConfig = NormalizeConfig()
    max_len: int = DEFAULT_MAX_LEN
    checkpoint_id: str = ""

    @classmethod
    def load(cls, path: str | Path) -> "Paraphraser":
        c = ckpt.load_checkpoint(path)
        if c.vocab is None:
            raise ckpt.CheckpointError(f"{path} has no vocab.txt")
        text = c.extra.get("text", {})
        norm = NormalizeConfig(**text.get("normalize", {}))
        return cls(c.model, c.vocab, norm, int(text.get("max_len", DEFAULT_MAX_LEN)), c.checkpoint_id)

    @property
    def max_gen_len(self) -> int:
        return min(self.max_len + 1, self.model.cfg.max_positions)

    def source(self, text: str) -> TokenSeq:
        return encode(normalize(text, self.norm), self.vocab, self.max_len)

    def target(self, text: str) -> TokenSeq:
        return encode_target(normalize(text, self.norm), self.vocab, self.max_len)

    def content_tokens(self, text: str) -> tuple[str, ...]:
        return self.source(text).tokens[1:-1]

    def generate(
        self, xs: Sequence[TokenSeq], acts: Sequence[Sequence[Action]], beams: int = 8, chunk: int = 64
    ) -> list[Hypothesis]:
        out: list[Hypothesis] = []
        for i in range(0, len(xs), chunk):
            out += beam_search_batch(self.model, xs[i : i + chunk], acts[i : i + chunk], beams, self.max_gen_len)
        return out

    def decode(self, h: Hypothesis) -> str:
        return decode(h.ids, self.vocab)

    def full_actions(
        self, x: TokenSeq, content_actions: Sequence[Action] | None = None, mode: Mode | str | None = None,
        rng: np.random.Generator | None = None,
    ) -> ActionSeq:
        """Actions over ``x`` incl. specials. User actions cover content tokens;
        longer sequences are truncated with the text. Default is all-O."""
        n = len(x) - 2
        if content_actions is not None:
            content_actions = tuple(content_actions)
            if len(content_actions) != n and not (len(content_actions) > n == self.max_len):
                raise ValueError(f"expected {n} actions (one per content token), got {len(content_actions)}")
            return wrap_content_actions(content_actions[:n])
        inner = actions_for_mode(x, mode or Mode.OS, rng)
        return wrap_content_actions(inner[1:-1])

    def paraphrase(
        self,
        text: str,
        content_actions: Sequence[Action] | None = None,
        mode: Mode | str | None = None,
        beams: int = 8,
        seed: int = 0,
    ) -> Generation:
        x = self.source(text)
        used = self.full_actions(x, content_actions, mode, np.random.default_rng(seed))
        h = self.generate([x], [used], beams)[0]
        return Generation(self.decode(h), x.tokens[1:-1], used, h.score)

"""Keep/paraphrase/optional action tokens.

Oracle actions come from set intersection of source and target tokens. The
training strategy mixes three branches per sample (keep the oracle actions,
turn the sample into a copy task, or blank the actions to the optional token),
and inference builds actions from one of the named modes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .text_prep import CLS, SEP, TokenSeq


class Action(enum.IntEnum):
    K = 0
    P = 1
    O = 2  # noqa: E741


ActionSeq = tuple[Action, ...]


def format_actions(actions: Sequence[Action]) -> str:
    return " ".join(Action(a).name for a in actions)


def parse_actions(text: str) -> ActionSeq:
    """Parse ``"P K K O"`` (whitespace optional between symbols)."""
    symbols = text.split() if any(c.isspace() for c in text.strip()) else list(text.strip())
    out = []
    for s in symbols:
        if s not in ("K", "P", "O"):
            raise ValueError(f"invalid action symbol {s!r}; expected one of K, P, O")
        out.append(Action[s])
    return tuple(out)


def _surfaces(seq: TokenSeq | Sequence[str]) -> tuple[str, ...]:
    return tuple(seq.tokens) if isinstance(seq, TokenSeq) else tuple(seq)


@dataclass(frozen=True)
class ActionDerivation:
    v_x: frozenset
    v_y: frozenset
    v_xy: frozenset


def derivation(x, y) -> ActionDerivation:
    v_x, v_y = frozenset(_surfaces(x)), frozenset(_surfaces(y))
    return ActionDerivation(v_x, v_y, v_x & v_y)


def derive_actions(x: TokenSeq | Sequence[str], y: TokenSeq | Sequence[str]) -> ActionSeq:
    """K for every source token that also occurs anywhere in the target, else P.

    The target carries [SEP] but no [CLS], so [CLS] always gets P and [SEP] K.
    """
    xs, ys = _surfaces(x), _surfaces(y)
    if not xs or not ys:
        raise ValueError("derive_actions needs non-empty source and target sequences")
    if xs[0] != CLS or xs[-1] != SEP:
        raise ValueError("source must start with [CLS] and end with [SEP]")
    if ys[-1] != SEP or CLS in ys:
        raise ValueError("target must end with [SEP] and contain no [CLS]")
    shared = derivation(xs, ys).v_xy
    return tuple(Action.K if tok in shared else Action.P for tok in xs)


@dataclass(frozen=True)
class StrategyWeights:
    keep: float = 0.2
    copy: float = 0.1
    inference: float = 0.7

    def validate(self) -> None:
        for name in ("keep", "copy", "inference"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ValueError(f"strategy weight {name}={v} outside [0, 1]")
        total = self.keep + self.copy + self.inference
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"strategy weights must sum to 1, got {total}")

    def branch(self, draw: float) -> str:
        if draw < self.keep:
            return "keep"
        if draw < self.keep + self.copy:
            return "copy"
        return "inference"


@dataclass(frozen=True)
class TrainingTriple:
    x: TokenSeq
    a: ActionSeq
    y: TokenSeq
    branch: str = "keep"

    def __post_init__(self):
        if len(self.a) != len(self.x):
            raise ValueError(f"action length {len(self.a)} != source length {len(self.x)}")


def copy_target(x: TokenSeq) -> TokenSeq:
    """The source content with [SEP] appended, [CLS] dropped."""
    keep = [i for i, t in enumerate(x.tokens) if t != CLS]
    return TokenSeq(tuple(x.tokens[i] for i in keep), tuple(x.ids[i] for i in keep))


def apply_training_strategy(
    pair: tuple[TokenSeq, TokenSeq],
    weights: StrategyWeights,
    rng: np.random.Generator | None = None,
    *,
    draw: float | None = None,
) -> TrainingTriple:
    """One uniform draw picks the branch; ``draw`` overrides the generator."""
    weights.validate()
    x, y = pair
    if draw is None:
        if rng is None:
            raise ValueError("either rng or draw is required")
        draw = float(rng.random())
    branch = weights.branch(draw)
    if branch == "keep":
        return TrainingTriple(x, derive_actions(x, y), y, branch)
    if branch == "copy":
        return TrainingTriple(x, (Action.K,) * len(x), copy_target(x), branch)
    return TrainingTriple(x, (Action.O,) * len(x), y, branch)


class Mode(str, enum.Enum):
    RANDOM = "Random"
    KS = "Ks"
    PS = "Ps"
    OS = "Os"
    ORACLE = "Oracle"

    @classmethod
    def parse(cls, name: str) -> "Mode":
        for m in cls:
            if m.value.lower() == name.lower():
                return m
        raise ValueError(f"unknown action mode {name!r}; expected one of {[m.value for m in cls]}")


def actions_for_mode(
    x: TokenSeq,
    mode: Mode | str | Sequence[Action],
    rng: np.random.Generator | None = None,
    y: TokenSeq | None = None,
) -> ActionSeq:
    """Build the action input for ``x``.

    ``mode`` is a :class:`Mode` (or its name) or an explicit user action
    sequence, which must match ``len(x)``.
    """
    m = len(x)
    if not isinstance(mode, (Mode, str)):
        user = tuple(Action(a) for a in mode)
        if len(user) != m:
            raise ValueError(f"user action sequence has length {len(user)}, expected {m}")
        return user
    mode = Mode.parse(mode) if not isinstance(mode, Mode) else mode
    if mode is Mode.KS:
        return (Action.K,) * m
    if mode is Mode.PS:
        return (Action.P,) * m
    if mode is Mode.OS:
        return (Action.O,) * m
    if mode is Mode.ORACLE:
        if y is None:
            raise ValueError("Oracle mode requires the target sequence")
        return derive_actions(x, y)
    if rng is None:
        raise ValueError("Random mode requires a seeded generator")
    return tuple(Action(int(v)) for v in rng.integers(0, 2, size=m))


def wrap_content_actions(content: Sequence[Action]) -> ActionSeq:
    """Add the fixed special-token actions: [CLS] -> P, [SEP] -> K."""
    return (Action.P, *map(Action, content), Action.K)

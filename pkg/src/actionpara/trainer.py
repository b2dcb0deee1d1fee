"""AdamW + linear warmup/decay training loop with early stopping on
validation loss and epoch-boundary resumable checkpoints."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .actions import Action, StrategyWeights, TrainingTriple, apply_training_strategy
from .data import ParaphrasePair
from .model import ActionTransformer, batch_loss, make_batch
from .text_prep import DEFAULT_MAX_LEN, NormalizeConfig, TokenSeq, Vocab, encode, encode_target, normalize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 5e-5
    warmup_steps: int = 200
    max_epochs: int = 40
    patience_epochs: int = 8
    clip_norm: float = 1.0
    weights: StrategyWeights = field(default_factory=StrategyWeights)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_len: int = DEFAULT_MAX_LEN
    eval_batch_size: int = 128

    def validate(self) -> None:
        for name in ("batch_size", "max_epochs", "patience_epochs", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.clip_norm <= 0 or self.warmup_steps < 0:
            raise ValueError("learning_rate and clip_norm must be positive, warmup_steps non-negative")
        if self.patience_epochs > self.max_epochs:
            raise ValueError("patience_epochs cannot exceed max_epochs")
        self.weights.validate()

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        base = dict(batch_size=64, learning_rate=5e-5, warmup_steps=5000, max_epochs=256, patience_epochs=32)
        return cls(**{**base, **kw})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = StrategyWeights(**d["weights"])
        elif isinstance(d.get("weights"), (list, tuple)):
            d["weights"] = StrategyWeights(*d["weights"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Linear ramp to ``learning_rate`` over warmup, then linear decay to 0 at ``total_steps``."""
    peak, warm = cfg.learning_rate, cfg.warmup_steps
    if step < warm:
        return peak * step / warm
    if total_steps <= warm:
        return peak if step == warm else 0.0
    return peak * max(0.0, (total_steps - step) / (total_steps - warm))


def global_norm(grads: Sequence[torch.Tensor]) -> float:
    return math.sqrt(sum(float(torch.sum(g.double() ** 2)) for g in grads))


def clip_gradients(grads: Sequence[torch.Tensor], clip_norm: float) -> float:
    """Scale ``grads`` in place so their global l2 norm is at most ``clip_norm``.

    Returns the pre-clip norm.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise FloatingPointError(f"non-finite gradient norm {norm}")
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


@dataclass
class OptimizerState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def zeros_like(cls, named_params, **hyper) -> "OptimizerState":
        m = {n: torch.zeros_like(p) for n, p in named_params}
        return cls(m, {n: torch.zeros_like(t) for n, t in m.items()}, 0, **hyper)


def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: OptimizerState, lr: float) -> None:
    """In-place AdamW: shrink by ``1 - lr*decay``, then subtract the bias-corrected Adam step."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m, v = state.m[name], state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if state.weight_decay:
                p.mul_(1.0 - lr * state.weight_decay)
            denom = (v / c2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-lr / c1)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    diverged: bool = False

    def to_jsonl(self) -> str:
        """Deterministic per-epoch records; wall time is kept out of this stream."""
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def timing_jsonl(self) -> str:
        return "".join(json.dumps({"epoch": i + 1, "wall_time": t}) + "\n" for i, t in enumerate(self.wall_times))

    @classmethod
    def from_records(cls, records, diverged=False) -> "TrainLog":
        return cls([dict(r) for r in records], [], diverged)


@dataclass
class EncodedPair:
    x: TokenSeq
    y: TokenSeq


def encode_pairs(
    pairs: Sequence[ParaphrasePair], vocab: Vocab, norm: NormalizeConfig, max_len: int
) -> list[EncodedPair]:
    return [
        EncodedPair(
            encode(normalize(p.source, norm), vocab, max_len),
            encode_target(normalize(p.target, norm), vocab, max_len),
        )
        for p in pairs
    ]


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def epoch_batches(
    data: Sequence[EncodedPair], cfg: TrainConfig, epoch: int
) -> tuple[list[list[TrainingTriple]], dict[str, int]]:
    """Draw a strategy branch per shuffled sample; batches group similar source lengths."""
    rng = _epoch_rng(cfg.seed, epoch)
    order = rng.permutation(len(data))
    triples = [apply_training_strategy((data[i].x, data[i].y), cfg.weights, rng) for i in order]
    counts = {"keep": 0, "copy": 0, "inference": 0}
    for t in triples:
        counts[t.branch] += 1
    pool = cfg.batch_size * 50
    batches = []
    for start in range(0, len(triples), pool):
        chunk = sorted(triples[start : start + pool], key=lambda t: (len(t.x), len(t.y)))
        batches += [chunk[i : i + cfg.batch_size] for i in range(0, len(chunk), cfg.batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order], counts


def validation_loss(model: ActionTransformer, data: Sequence[EncodedPair], batch_size: int = 128) -> float:
    """Token-averaged loss with all-O actions, dropout off."""
    was = model.training
    model.eval()
    total, tokens = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            chunk = data[i : i + batch_size]
            batch = make_batch([TrainingTriple(p.x, (Action.O,) * len(p.x), p.y, "inference") for p in chunk])
            n = int(batch.tgt_out.ne(0).sum())
            total += float(batch_loss(model, batch, reduction="sum"))
            tokens += n
    model.train(was)
    return total / max(tokens, 1)


@dataclass
class FitResult:
    model: ActionTransformer  # best-validation weights
    log: TrainLog
    best_epoch: int
    best_valid_loss: float
    checkpoint_id: str = ""


def _steps_per_epoch(n: int, cfg: TrainConfig) -> int:
    # bucketing splits into pools; count the resulting batches exactly
    pool = cfg.batch_size * 50
    full, rest = divmod(n, pool)
    return full * math.ceil(pool / cfg.batch_size) + math.ceil(rest / cfg.batch_size)


def _opt_arrays(state: OptimizerState, best: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    arrays = {f"adam.m/{k}": v for k, v in state.m.items()}
    arrays.update({f"adam.v/{k}": v for k, v in state.v.items()})
    arrays.update({f"best/{k}": v for k, v in best.items()})
    return arrays


def fit(
    model: ActionTransformer,
    train: Sequence[EncodedPair],
    valid: Sequence[EncodedPair],
    cfg: TrainConfig,
    outdir: str | Path | None = None,
    vocab: Vocab | None = None,
    extra: dict | None = None,
    resume: bool = False,
    stop_after_epochs: int | None = None,
) -> FitResult:
    """Train with early stopping; returns the best-validation model.

    With ``outdir``, the resumable state goes to ``outdir/last`` after every
    epoch and the best model to ``outdir/best``. ``resume=True`` continues from
    ``outdir/last``. ``stop_after_epochs`` halts after that many epochs of this
    call (used to simulate an interruption).
    """
    cfg.validate()
    if not train or not valid:
        raise ValueError("fit needs non-empty train and valid sets")
    outdir = Path(outdir) if outdir is not None else None
    params = dict(model.named_parameters())
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)
    state = OptimizerState.zeros_like(params.items(), **hyper)
    tlog = TrainLog()
    best = {k: v.detach().clone() for k, v in params.items()}
    best_val, best_epoch, bad, start_epoch = math.inf, 0, 0, 1
    if resume:
        if outdir is None:
            raise ValueError("resume requires outdir")
        loaded = ckpt.load_checkpoint(outdir / "last")
        with torch.no_grad():
            for k, p in params.items():
                p.copy_(dict(loaded.model.named_parameters())[k])
        for k in params:
            state.m[k] = torch.from_numpy(loaded.arrays[f"adam.m/{k}"]).to(params[k].dtype)
            state.v[k] = torch.from_numpy(loaded.arrays[f"adam.v/{k}"]).to(params[k].dtype)
            best[k] = torch.from_numpy(loaded.arrays[f"best/{k}"]).to(params[k].dtype)
        ts = loaded.extra["trainer"]
        state.step = ts["step"]
        best_val, best_epoch, bad = ts["best_valid_loss"], ts["best_epoch"], ts["bad_epochs"]
        start_epoch = ts["epoch"] + 1
        tlog = TrainLog.from_records(ts["log"])
    total_steps = cfg.max_epochs * _steps_per_epoch(len(train), cfg)
    model.train()
    ran = 0
    for epoch in range(start_epoch, cfg.max_epochs + 1):
        if bad >= cfg.patience_epochs or (stop_after_epochs is not None and ran >= stop_after_epochs):
            break
        t0 = time.perf_counter()
        batches, counts = epoch_batches(train, cfg, epoch)
        torch.manual_seed(cfg.seed * 1_000_003 + epoch)
        loss_sum, tok_sum, lr = 0.0, 0, 0.0
        try:
            for triples in batches:
                batch = make_batch(triples)
                for p in params.values():
                    p.grad = None
                loss = batch_loss(model, batch)
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite training loss at step {state.step}")
                loss.backward()
                grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in params.items()}
                clip_gradients(list(grads.values()), cfg.clip_norm)
                lr = lr_at(state.step, cfg, total_steps)
                adamw_step(params, grads, state, lr)
                n = int(batch.tgt_out.ne(0).sum())
                loss_sum += loss.item() * n
                tok_sum += n
        except FloatingPointError as e:
            log.error("training diverged in epoch %d: %s", epoch, e)
            tlog.diverged = True
            break
        val = validation_loss(model, valid, cfg.eval_batch_size)
        improved = val < best_val
        if improved:
            best_val, best_epoch, bad = val, epoch, 0
            best = {k: v.detach().clone() for k, v in params.items()}
        else:
            bad += 1
        tlog.records.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / max(tok_sum, 1),
                "valid_loss": val,
                "lr": lr,
                "step": state.step,
                "branch_counts": counts,
                "improved": improved,
            }
        )
        tlog.wall_times.append(time.perf_counter() - t0)
        log.info("epoch %d train %.4f valid %.4f%s", epoch, tlog.records[-1]["train_loss"], val, " *" if improved else "")
        ran += 1
        if outdir is not None:
            trainer_state = {
                "epoch": epoch,
                "step": state.step,
                "best_valid_loss": best_val,
                "best_epoch": best_epoch,
                "bad_epochs": bad,
                "log": tlog.records,
                "train_config": cfg.to_dict(),
            }
            ckpt.save_checkpoint(
                outdir / "last", model, _opt_arrays(state, best), {**(extra or {}), "trainer": trainer_state}, vocab
            )
    best_model = copy.deepcopy(model)
    with torch.no_grad():
        for k, p in best_model.named_parameters():
            p.copy_(best[k])
    best_model.eval()
    cid = ""
    if outdir is not None:
        (outdir).mkdir(parents=True, exist_ok=True)
        (outdir / "train_log.jsonl").write_text(tlog.to_jsonl(), encoding="utf-8")
        (outdir / "timing.jsonl").write_text(tlog.timing_jsonl(), encoding="utf-8")
        info = {"best_epoch": best_epoch, "best_valid_loss": best_val, "train_config": cfg.to_dict()}
        cid = ckpt.save_checkpoint(outdir / "best", best_model, None, {**(extra or {}), "training": info}, vocab)
        log.info("best checkpoint %s (epoch %d)", cid[:12], best_epoch)
    return FitResult(best_model, tlog, best_epoch, best_val, cid)

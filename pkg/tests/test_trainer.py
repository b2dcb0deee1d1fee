import hashlib
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from actionpara import checkpoint as ckpt
from actionpara import trainer as trainer_mod
from actionpara.actions import StrategyWeights
from actionpara.data import SyntheticGrammar, gen_synthetic
from actionpara.model import ModelConfig, init_params
from actionpara.text_prep import NormalizeConfig, build_vocab, normalize
from actionpara.trainer import (
    EncodedPair,
    OptimizerState,
    TrainConfig,
    adamw_step,
    clip_gradients,
    encode_pairs,
    epoch_batches,
    fit,
    global_norm,
    lr_at,
    validation_loss,
)

# -- schedule ---------------------------------------------------------------------


def test_lr_schedule_points():
    cfg = TrainConfig(learning_rate=5e-5, warmup_steps=100)
    total = 1100
    assert lr_at(0, cfg, total) == 0.0
    assert lr_at(100, cfg, total) == 5e-5
    assert lr_at(600, cfg, total) == pytest.approx(2.5e-5, abs=1e-12)
    assert lr_at(total, cfg, total) == 0.0


@given(st.integers(1, 500), st.integers(1, 5000))
def test_lr_schedule_shape(warm, extra):
    cfg = TrainConfig(learning_rate=1.0, warmup_steps=warm)
    total = warm + extra
    values = [lr_at(s, cfg, total) for s in range(total + 1)]
    assert max(values) == values[warm] == 1.0
    # piecewise linear: consecutive differences are constant on each side of the peak
    up, down = np.diff(values[: warm + 1]), np.diff(values[warm:])
    assert np.allclose(up, 1 / warm) and np.allclose(down, -1 / extra)


# -- clipping ----------------------------------------------------------------------


def test_clip_scales_to_unit_norm():
    g = [torch.tensor([3.0, 4.0])]
    assert clip_gradients(g, 1.0) == 5.0
    assert torch.allclose(g[0], torch.tensor([0.6, 0.8]))


def test_clip_below_threshold_is_noop():
    g = [torch.tensor([0.3, 0.4])]
    clip_gradients(g, 1.0)
    assert torch.equal(g[0], torch.tensor([0.3, 0.4]))


def test_clip_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        clip_gradients([torch.tensor([1.0, float("inf")])], 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 10.0))
def test_clip_norm_property(seed, clip):
    gen = torch.Generator().manual_seed(seed)
    grads = [torch.randn(3, 4, generator=gen, dtype=torch.float64) * 3, torch.randn(7, generator=gen, dtype=torch.float64)]
    before = [g.clone() for g in grads]
    g0 = clip_gradients(grads, clip)
    assert global_norm(grads) == pytest.approx(min(g0, clip), abs=1e-9)
    for a, b in zip(grads, before):
        assert torch.all(a.abs() <= b.abs() + 1e-15)


# -- AdamW ----------------------------------------------------------------------------


def _adam(p, wd):
    return OptimizerState.zeros_like(p.items(), weight_decay=wd)


def test_adamw_first_step_by_hand():
    p = {"w": torch.tensor([1.0], dtype=torch.float64)}
    adamw_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, _adam(p, 0.0), lr=0.1)
    # m_hat = v_hat = 1, so the update is lr * 1 / (1 + eps)
    assert p["w"].item() == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert p["w"].item() == pytest.approx(0.9, abs=1e-8)


def test_adamw_zero_gradient_fixed_point():
    p = {"w": torch.tensor([0.5, -2.0])}
    adamw_step(p, {"w": torch.zeros(2)}, _adam(p, 0.0), lr=0.1)
    assert torch.equal(p["w"], torch.tensor([0.5, -2.0]))


def test_adamw_decay_is_decoupled():
    p = {"w": torch.tensor([0.5, -2.0], dtype=torch.float64)}
    adamw_step(p, {"w": torch.zeros(2, dtype=torch.float64)}, _adam(p, 0.01), lr=0.1)
    assert torch.allclose(p["w"], torch.tensor([0.5, -2.0], dtype=torch.float64) * (1 - 0.1 * 0.01), atol=0)


def test_adamw_matches_torch_reference():
    gen = torch.Generator().manual_seed(0)
    w0 = torch.randn(5, 3, generator=gen, dtype=torch.float64)
    mine = {"w": w0.clone()}
    ref = torch.nn.Parameter(w0.clone())
    opt = torch.optim.AdamW([ref], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01)
    state = _adam(mine, 0.01)
    for _ in range(25):
        g = torch.randn(5, 3, generator=gen, dtype=torch.float64)
        adamw_step(mine, {"w": g.clone()}, state, lr=0.01)
        ref.grad = g.clone()
        opt.step()
    assert torch.allclose(mine["w"], ref.detach(), atol=1e-12)


# -- fitting on a tiny corpus ---------------------------------------------------------

NORM = NormalizeConfig()


@pytest.fixture(scope="module")
def tiny_data():
    grammar = SyntheticGrammar.default(n_anchor=8, n_mapped=20, seed=7)
    pairs = gen_synthetic(grammar, 120, seed=0)
    vocab = build_vocab([normalize(t) for p in pairs for t in (p.source, p.target)], 200)
    enc = encode_pairs(pairs, vocab, NORM, 20)
    return vocab, enc[:96], enc[96:]


def _model(vocab, seed=0):
    cfg = ModelConfig(vocab_size=vocab.size, d_model=16, enc_layers=1, dec_layers=1, n_heads=2, d_ff=32)
    return init_params(cfg, seed)


def _cfg(**kw):
    base = dict(batch_size=16, learning_rate=3e-3, warmup_steps=5, max_epochs=4, patience_epochs=4)
    return TrainConfig(**{**base, **kw})


def test_branch_frequencies_over_one_epoch():
    x = EncodedPair(*encode_pairs([gen_synthetic(SyntheticGrammar.default(), 1, 0)[0]],
                                  build_vocab(["a"], 5), NORM, 20)[0].__dict__.values())
    data = [x] * 10_000
    _, counts = epoch_batches(data, TrainConfig(weights=StrategyWeights(0.2, 0.1, 0.7)), epoch=1)
    assert counts["keep"] / 1e4 == pytest.approx(0.2, abs=0.02)
    assert counts["copy"] / 1e4 == pytest.approx(0.1, abs=0.02)
    assert counts["inference"] / 1e4 == pytest.approx(0.7, abs=0.02)


def test_batches_cover_every_sample_once(tiny_data):
    _, train, _ = tiny_data
    batches, counts = epoch_batches(train, _cfg(), epoch=3)
    assert sum(len(b) for b in batches) == len(train) == sum(counts.values())
    assert sorted(id(t.x) for b in batches for t in b) == sorted(id(p.x) for p in train)


def test_fit_is_deterministic(tiny_data, tmp_path):
    vocab, train, valid = tiny_data
    a = fit(_model(vocab), train, valid, _cfg(), tmp_path / "a", vocab)
    b = fit(_model(vocab), train, valid, _cfg(), tmp_path / "b", vocab)
    assert (tmp_path / "a/train_log.jsonl").read_bytes() == (tmp_path / "b/train_log.jsonl").read_bytes()
    for sub in ("best", "last"):
        for f in ("manifest.json", "weights.bin", "vocab.txt"):
            assert (tmp_path / "a" / sub / f).read_bytes() == (tmp_path / "b" / sub / f).read_bytes()
    assert a.checkpoint_id == b.checkpoint_id == hashlib.sha256((tmp_path / "a/best/manifest.json").read_bytes()).hexdigest()


def test_returned_model_has_lowest_logged_validation_loss(tiny_data):
    vocab, train, valid = tiny_data
    res = fit(_model(vocab), train, valid, _cfg(max_epochs=5, patience_epochs=5))
    logged = [r["valid_loss"] for r in res.log.records]
    assert res.best_valid_loss == min(logged)
    assert validation_loss(res.model, valid) == pytest.approx(res.best_valid_loss, rel=1e-6)
    assert res.log.records[0]["valid_loss"] > res.best_valid_loss


def test_patience_stops_after_exact_non_improving_epochs(tiny_data):
    vocab, train, valid = tiny_data
    # a negligible step size leaves the model at its starting point, which is then the minimum
    res = fit(_model(vocab), train, valid, _cfg(learning_rate=1e-30, max_epochs=10, patience_epochs=2))
    flags = [r["improved"] for r in res.log.records]
    assert flags == [True, False, False]


def test_validation_uses_optional_actions(tiny_data, monkeypatch):
    vocab, _, valid = tiny_data
    seen = []
    orig = trainer_mod.make_batch

    def spy(triples):
        seen.extend(a for t in triples for a in t.a)
        return orig(triples)

    monkeypatch.setattr(trainer_mod, "make_batch", spy)
    validation_loss(_model(vocab), valid)
    assert seen and set(seen) == {trainer_mod.Action.O}


def test_resume_equals_uninterrupted(tiny_data, tmp_path):
    vocab, train, valid = tiny_data
    full = fit(_model(vocab), train, valid, _cfg(), tmp_path / "full", vocab)
    fit(_model(vocab), train, valid, _cfg(), tmp_path / "part", vocab, stop_after_epochs=2)
    resumed = fit(_model(vocab), train, valid, _cfg(), tmp_path / "part", vocab, resume=True)
    assert resumed.log.records == full.log.records
    for (_, p), (_, q) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
        assert torch.equal(p, q)
    for f in ("train_log.jsonl",):
        assert (tmp_path / "full" / f).read_bytes() == (tmp_path / "part" / f).read_bytes()
    assert (tmp_path / "full/best/weights.bin").read_bytes() == (tmp_path / "part/best/weights.bin").read_bytes()


def test_divergence_stops_with_last_good_model(tiny_data, monkeypatch):
    vocab, train, valid = tiny_data
    calls = {"n": 0}
    orig = trainer_mod.batch_loss

    def flaky(model, batch, reduction="mean"):
        out = orig(model, batch, reduction)
        if model.training:
            calls["n"] += 1
            if calls["n"] > len(train) // 16:  # second epoch
                return out * float("nan")
        return out

    monkeypatch.setattr(trainer_mod, "batch_loss", flaky)
    res = fit(_model(vocab), train, valid, _cfg())
    assert res.log.diverged and len(res.log.records) == 1 and res.best_epoch == 1
    assert all(torch.isfinite(p).all() for p in res.model.parameters())


def test_wall_time_is_kept_out_of_the_log(tiny_data, tmp_path):
    vocab, train, valid = tiny_data
    fit(_model(vocab), train, valid, _cfg(max_epochs=1, patience_epochs=1), tmp_path, vocab)
    rec = json.loads((tmp_path / "train_log.jsonl").read_text().splitlines()[0])
    assert "wall_time" not in rec and set(rec["branch_counts"]) == {"keep", "copy", "inference"}
    assert "wall_time" in (tmp_path / "timing.jsonl").read_text()


def test_config_validation_and_dict_roundtrip():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(weights=StrategyWeights(0.5, 0.5, 0.5)).validate()
    cfg = TrainConfig(seed=3, weights=StrategyWeights(0.3, 0.0, 0.7))
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    assert TrainConfig.full_scale().learning_rate == 5e-5


# -- checkpoints ------------------------------------------------------------------------


def test_checkpoint_roundtrip_is_byte_identical(tiny_data, tmp_path):
    vocab, _, _ = tiny_data
    m = _model(vocab)
    extra_arrays = {"adam.m/x": np.arange(6, dtype=np.float32).reshape(2, 3)}
    cid = ckpt.save_checkpoint(tmp_path / "a", m, extra_arrays, {"note": 1}, vocab)
    loaded = ckpt.load_checkpoint(tmp_path / "a")
    assert loaded.checkpoint_id == cid == ckpt.manifest_hash(tmp_path / "a")
    ckpt.save_checkpoint(tmp_path / "b", loaded.model, loaded.arrays, loaded.extra, loaded.vocab)
    for f in ("manifest.json", "weights.bin", "vocab.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    np.testing.assert_array_equal(loaded.arrays["adam.m/x"], extra_arrays["adam.m/x"])


@pytest.mark.parametrize("field", ["format", "version", "config", "blob_sha256", "arrays"])
def test_corrupted_manifest_names_field(tiny_data, tmp_path, field):
    vocab, _, _ = tiny_data
    ckpt.save_checkpoint(tmp_path, _model(vocab), vocab=vocab)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    if field == "version":
        manifest["version"] = 99
    elif field == "config":
        manifest["config"]["d_model"] = 15
    elif field == "arrays":
        manifest["arrays"][0]["shape"] = [1, 1]
        manifest["arrays"] = manifest["arrays"][:1] + manifest["arrays"][2:]
    else:
        del manifest[field]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ckpt.CheckpointError, match=field):
        ckpt.load_checkpoint(tmp_path)


def test_checkpoint_not_json(tmp_path):
    (tmp_path / "manifest.json").write_text("{nope")
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_checkpoint(tmp_path)


def test_checkpoint_f64_roundtrip(tmp_path):
    m = init_params(ModelConfig(vocab_size=12, d_model=8, n_heads=2, d_ff=8, precision="f64"), 1)
    ckpt.save_checkpoint(tmp_path, m)
    back = ckpt.load_checkpoint(tmp_path).model
    for (_, p), (_, q) in zip(m.named_parameters(), back.named_parameters()):
        assert p.dtype == q.dtype == torch.float64 and torch.equal(p, q)


def test_lr_schedule_handles_no_decay_span():
    cfg = TrainConfig(learning_rate=1.0, warmup_steps=10)
    assert lr_at(10, cfg, 10) == 1.0 and lr_at(11, cfg, 10) == 0.0
    assert math.isclose(lr_at(5, cfg, 10), 0.5)

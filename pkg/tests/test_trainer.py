import json
import math
import random

import numpy as np
import pytest
import torch

from babylab.corpus import documents_to_stream
from babylab.model import ModelConfig, build_model, load_checkpoint
from babylab.tokenizer import train_tokenizer
from babylab.trainer import (
    TrainingConfig,
    TrainingConfigError,
    _param_groups,
    accumulated_gradients,
    evaluate_loss,
    lr_at_step,
    masking_policy,
    should_stop,
    train,
)

# -- configuration -----------------------------------------------------------------------


def test_defaults_are_the_restricted_regimen():
    c = TrainingConfig()
    assert (c.initial_lr, c.batch_size, c.max_epochs, c.patience) == (5e-4, 32, 2, None)
    assert (c.grad_accum_steps, c.scheduler, c.warmup_steps, c.weight_decay) == (8, "cosine", 1000, 0.01)
    assert c.metric == "loss" and c.reduced_precision is False
    assert c.effective_batch == 256 and c.restricted


def test_unrestricted_preset():
    c = TrainingConfig.unrestricted_preset()
    assert (c.max_epochs, c.patience) == (40, 3) and not c.restricted


@pytest.mark.parametrize("kw", [{"max_epochs": 2, "patience": 3}, {"max_epochs": 40, "patience": None}])
def test_patience_is_null_exactly_in_restricted_mode(kw):
    with pytest.raises(TrainingConfigError, match="patience"):
        TrainingConfig(**kw)


@pytest.mark.parametrize("field,value", [("initial_lr", 0), ("batch_size", 0), ("grad_accum_steps", 0),
                                         ("warmup_steps", -1), ("scheduler", "linear"), ("metric", "acc"),
                                         ("eval_fraction", 1.0)])
def test_invalid_values_name_the_field(field, value):
    with pytest.raises(TrainingConfigError, match=field):
        TrainingConfig(**{field: value})


def test_config_file_round_trip(tmp_path):
    c = TrainingConfig.unrestricted_preset(seed=9, batch_size=4)
    path = tmp_path / "train.json"
    path.write_text(json.dumps(c.to_dict()))
    assert TrainingConfig.load(path) == c
    path.write_text(json.dumps({"learning_rate": 1}))
    with pytest.raises(TrainingConfigError, match="learning_rate"):
        TrainingConfig.load(path)


# -- schedule -----------------------------------------------------------------------------


def test_lr_ramp_start_and_peak_are_exact():
    c = TrainingConfig()
    assert lr_at_step(c, 0, 10_000) == 0.0
    assert lr_at_step(c, 1000, 10_000) == 5e-4


def test_lr_cosine_midpoint_is_half():
    c = TrainingConfig()
    total = 9000
    assert math.isclose(lr_at_step(c, (1000 + total) // 2, total), 2.5e-4, rel_tol=1e-12)


def test_lr_ramp_is_linear_and_decay_reaches_zero():
    c = TrainingConfig()
    assert math.isclose(lr_at_step(c, 250, 5000), 1.25e-4, rel_tol=1e-12)
    assert lr_at_step(c, 5000, 5000) == 0.0
    values = [lr_at_step(c, s, 5000) for s in range(1000, 5001, 50)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_needs_total_at_least_warmup():
    with pytest.raises(ValueError):
        lr_at_step(TrainingConfig(), 0, 999)


# -- stopping -----------------------------------------------------------------------------


def test_decreasing_losses_never_stop():
    losses = [3.0 - 0.1 * i for i in range(30)]
    assert not any(should_stop(losses[:n], 3) for n in range(1, 31))


def test_three_non_improving_evaluations_stop():
    losses = [3.0, 2.0, 2.1, 2.2, 2.3]
    decisions = [should_stop(losses[:n], 3) for n in range(1, 6)]
    assert decisions == [False, False, False, False, True]


def test_ties_are_not_improvements():
    losses = [2.0, 2.0, 2.0, 2.0]
    assert [should_stop(losses[:n], 3) for n in range(1, 5)] == [False, False, False, True]


def test_recovery_resets_the_count():
    assert not should_stop([3.0, 2.0, 2.1, 1.9, 2.0, 2.0], 3)
    assert should_stop([3.0, 2.0, 2.1, 1.9, 2.0, 2.0, 1.95], 3)


def test_no_patience_never_stops():
    assert not should_stop([1.0] + [5.0] * 50, None)


# -- masking -------------------------------------------------------------------------------

MASK, VOCAB, SPECIALS = 2, 50, (0, 1, 2, 3, 4)


def test_masking_empty_sequence():
    corrupted, targets = masking_policy([], 0, mask_id=MASK, vocab_size=VOCAB)
    assert corrupted.size == 0 and targets.size == 0


def test_masking_fraction_over_ten_thousand_positions():
    ids = np.random.default_rng(0).integers(5, VOCAB, size=10_000)
    _, targets = masking_policy(ids, 1, mask_id=MASK, vocab_size=VOCAB, special_ids=SPECIALS)
    assert 0.14 <= targets.size / ids.size <= 0.16


def test_masking_split_and_determinism():
    ids = np.random.default_rng(1).integers(5, VOCAB, size=40_000)
    a, ta = masking_policy(ids, 7, mask_id=MASK, vocab_size=VOCAB, special_ids=SPECIALS)
    b, tb = masking_policy(ids, 7, mask_id=MASK, vocab_size=VOCAB, special_ids=SPECIALS)
    assert np.array_equal(a, b) and np.array_equal(ta, tb)
    masked = np.mean(a[ta] == MASK)
    kept = np.mean(a[ta] == ids[ta])
    assert abs(masked - 0.8) < 0.02
    # a random replacement can coincide with the original token (1 in 45)
    assert abs(kept - (0.1 + 0.1 / 45)) < 0.02
    untouched = np.setdiff1d(np.arange(ids.size), ta)
    assert np.array_equal(a[untouched], ids[untouched])
    assert not np.isin(a, [0, 1, 3, 4]).any()


def test_specials_are_never_targets():
    ids = np.array([3, 10, 11, 12, 4, 0, 0] * 50)
    _, targets = masking_policy(ids, 3, mask_id=MASK, vocab_size=VOCAB, special_ids=SPECIALS)
    assert not np.isin(ids[targets], SPECIALS).any()
    assert targets.size == round(0.15 * 150)


# -- gradients and loss accounting ------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_setup():
    rng = random.Random(0)
    docs = [" ".join(rng.choice(["la", "mela", "il", "cane", "corre", "rossa"]) for _ in range(6))
            for _ in range(40)]
    tok = train_tokenizer(docs, 270)
    stream = documents_to_stream(docs, tok, 8, seed=0)
    return tok, stream


def tiny(kind, tok, seed=0):
    cfg = ModelConfig(kind=kind, vocab_size=tok.vocab_size, max_length=8, hidden=8, heads=2, layers=1,
                      intermediate=16, dropout=0.0)
    return build_model(cfg, seed).double()


@pytest.mark.parametrize("kind", ["decoder", "encoder"])
def test_accumulated_gradient_equals_big_batch(tiny_setup, kind):
    tok, stream = tiny_setup
    # padding makes micro-batches unequal in token count, which the weighting must absorb
    idx = np.arange(len(stream) - 5, len(stream))
    grads = []
    for groups in ([idx], [idx[:2], idx[2:4], idx[4:]]):
        model = tiny(kind, tok)
        model.zero_grad()
        accumulated_gradients(model, stream, groups, epoch=0, seed=0)
        grads.append([p.grad.clone() for p in model.parameters()])
    for a, b in zip(*grads):
        assert torch.allclose(a, b, atol=1e-5, rtol=0)


@pytest.mark.parametrize("kind", ["decoder", "encoder"])
def test_frozen_loss_is_partition_invariant(tiny_setup, kind):
    tok, stream = tiny_setup
    model = tiny(kind, tok)
    idx = np.arange(len(stream))
    losses = [evaluate_loss(model, stream, idx, bs) for bs in (1, 3, len(idx))]
    assert max(losses) - min(losses) < 1e-9


def test_weight_decay_skips_biases_and_norms(tiny_setup):
    model = tiny("decoder", tiny_setup[0])
    decay, no_decay = _param_groups(model, 0.01)
    names = {id(p): n for n, p in model.named_parameters()}
    assert decay["weight_decay"] == 0.01 and no_decay["weight_decay"] == 0.0
    assert all(not names[id(p)].endswith("bias") and "norm" not in names[id(p)] for p in decay["params"])
    assert all(names[id(p)].endswith("bias") or "norm" in names[id(p)] for p in no_decay["params"])
    assert len(decay["params"]) + len(no_decay["params"]) == len(names)


# -- training runs ---------------------------------------------------------------------------


def test_toy_run_improves_and_logs_consistently(trained_toy):
    model, log, stream = trained_toy
    assert log.stop_reason == "max_epochs" and len(log.epochs) == 2
    losses = [s["loss"] for s in log.steps]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
    steps = [s["step"] for s in log.steps]
    assert steps == list(range(len(steps))) and len(steps) == log.total_steps
    from babylab.synthetic import TOY_TRAINING

    cfg = TrainingConfig(**TOY_TRAINING)
    for s in log.steps:
        assert s["lr"] == lr_at_step(cfg, s["step"], log.total_steps)
    assert log.words_seen == 2 * stream.words


def test_restricted_mode_runs_two_epochs_even_when_loss_rises(tiny_setup, tmp_path):
    tok, stream = tiny_setup
    model = tiny("decoder", tok).float()
    cfg = TrainingConfig.restricted_preset(batch_size=4, grad_accum_steps=1, warmup_steps=0, initial_lr=5.0,
                                           max_grad_norm=None)
    _, log = train(model, stream, cfg, checkpoint_dir=tmp_path)
    assert len(log.epochs) == 2 and log.stop_reason == "max_epochs"
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["best.ckpt", "epoch-1.ckpt", "epoch-2.ckpt", "last.ckpt"]
    _, meta = load_checkpoint(tmp_path / "last.ckpt")
    assert meta["epoch"] == 2


def test_unrestricted_run_on_noise_stops_early():
    rng = random.Random(0)
    vocab = [f"w{i}" for i in range(30)]
    docs = [" ".join(rng.choice(vocab) for _ in range(8)) for _ in range(300)]
    tok = train_tokenizer(docs, 282)
    stream = documents_to_stream(docs, tok, 16, seed=0)
    cfg = ModelConfig(kind="decoder", vocab_size=tok.vocab_size, max_length=16, hidden=32, heads=2, layers=1,
                      intermediate=64, dropout=0.0)
    tcfg = TrainingConfig.unrestricted_preset(batch_size=8, grad_accum_steps=1, warmup_steps=20, initial_lr=3e-3)
    _, log = train(build_model(cfg, 0), stream, tcfg)
    assert log.stop_reason == "early_stop"
    assert len(log.epochs) < 40


def test_encoder_training_reduces_loss(tiny_setup):
    tok, stream = tiny_setup
    model = tiny("encoder", tok).float()
    cfg = TrainingConfig.restricted_preset(batch_size=2, grad_accum_steps=2, warmup_steps=2, initial_lr=3e-3)
    _, log = train(model, stream, cfg)
    losses = [s["loss"] for s in log.steps]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_reduced_precision_runs(tiny_setup):
    tok, stream = tiny_setup
    cfg = TrainingConfig.restricted_preset(batch_size=4, grad_accum_steps=1, warmup_steps=0,
                                           reduced_precision=True)
    _, log = train(tiny("decoder", tok).float(), stream, cfg)
    assert all(math.isfinite(s["loss"]) for s in log.steps)


def test_training_errors(tiny_setup):
    tok, stream = tiny_setup
    model = tiny("decoder", tok).float()
    with pytest.raises(TrainingConfigError, match="warmup_steps"):
        train(model, stream, TrainingConfig.restricted_preset(batch_size=4, warmup_steps=10_000))
    empty = documents_to_stream([], tok, 8)
    with pytest.raises(ValueError, match="empty"):
        train(model, empty, TrainingConfig.restricted_preset(warmup_steps=0))

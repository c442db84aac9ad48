"""Training loop: AdamW, warmup + cosine schedule, gradient accumulation, early stopping.

Defaults are the published training arguments (lr 5e-4, batch 32, 8
accumulation steps, 1000 warmup steps, weight decay 0.01). Restricted runs
last exactly 2 epochs with no early stopping; unrestricted runs stop after 3
evaluations without improvement or at 40 epochs.
"""

from __future__ import annotations

import contextlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import TokenStream
from .model import TransformerModel, save_checkpoint

MASK_RATE = 0.15


class TrainingConfigError(ValueError):
    pass


@dataclass
class TrainingConfig:
    initial_lr: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 2
    patience: int | None = None
    grad_accum_steps: int = 8
    scheduler: str = "cosine"
    warmup_steps: int = 1000
    weight_decay: float = 0.01
    reduced_precision: bool = False
    metric: str = "loss"
    seed: int = 0
    eval_fraction: float = 0.02
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_grad_norm: float | None = 1.0

    def __post_init__(self) -> None:
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    def validate(self) -> None:
        if self.initial_lr <= 0:
            raise TrainingConfigError("initial_lr: must be positive")
        if self.batch_size < 1:
            raise TrainingConfigError("batch_size: must be >= 1")
        if self.grad_accum_steps < 1:
            raise TrainingConfigError("grad_accum_steps: must be >= 1")
        if self.max_epochs < 1:
            raise TrainingConfigError("max_epochs: must be >= 1")
        if self.warmup_steps < 0:
            raise TrainingConfigError("warmup_steps: must be >= 0")
        if self.scheduler != "cosine":
            raise TrainingConfigError(f"scheduler: only 'cosine' is supported, got {self.scheduler!r}")
        if self.metric != "loss":
            raise TrainingConfigError(f"metric: only 'loss' is supported, got {self.metric!r}")
        if self.patience is not None and self.patience < 1:
            raise TrainingConfigError("patience: must be >= 1 or null")
        # restricted mode (2 epochs) never early-stops; every other run does
        if (self.patience is None) != (self.max_epochs == 2):
            raise TrainingConfigError(
                "patience: must be null exactly when max_epochs == 2 "
                f"(got patience={self.patience}, max_epochs={self.max_epochs})"
            )
        if not 0.0 < self.eval_fraction < 1.0:
            raise TrainingConfigError("eval_fraction: must be in (0, 1)")

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accum_steps

    @property
    def restricted(self) -> bool:
        return self.max_epochs == 2

    @classmethod
    def restricted_preset(cls, **overrides) -> "TrainingConfig":
        return cls(**{"max_epochs": 2, "patience": None, **overrides})

    @classmethod
    def unrestricted_preset(cls, **overrides) -> "TrainingConfig":
        return cls(**{"max_epochs": 40, "patience": 3, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingConfigError(f"unknown training field(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise TrainingConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".toml":
            try:
                import tomllib  # type: ignore[import-not-found]
            except ImportError:  # python < 3.11
                raise TrainingConfigError("TOML configs need Python >= 3.11; use JSON") from None
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        return cls.from_dict(data)


def lr_at_step(config: TrainingConfig, step: int, total_steps: int) -> float:
    """Linear ramp from 0 over the warmup, then cosine decay to 0 at ``total_steps``."""
    if total_steps < config.warmup_steps:
        raise ValueError(f"total_steps {total_steps} < warmup_steps {config.warmup_steps}")
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < config.warmup_steps:
        return config.initial_lr * step / config.warmup_steps
    if step >= total_steps:
        return 0.0
    progress = (step - config.warmup_steps) / (total_steps - config.warmup_steps)
    return config.initial_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def should_stop(eval_losses: Sequence[float], patience: int | None) -> bool:
    """True once the last ``patience`` evaluations all failed to beat the best before them."""
    if patience is None or len(eval_losses) <= patience:
        return False
    best_before = min(eval_losses[:-patience])
    return all(loss >= best_before for loss in eval_losses[-patience:])


def masking_policy(ids: Sequence[int] | np.ndarray, seed: int, *, mask_id: int, vocab_size: int,
                   special_ids: Sequence[int] = (), rate: float = MASK_RATE):
    """Select 15% of the non-special positions as targets; 80% -> mask, 10% -> random, 10% kept.

    Returns ``(corrupted, targets)`` where ``targets`` is a sorted position array.
    Deterministic in ``seed``.
    """
    ids = np.asarray(ids, dtype=np.int64)
    corrupted = ids.copy()
    if ids.size == 0:
        return corrupted, np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    special = np.asarray(sorted(special_ids), dtype=np.int64)
    eligible = np.flatnonzero(~np.isin(ids, special))
    if eligible.size == 0:
        return corrupted, np.empty(0, dtype=np.int64)
    n_targets = max(1, int(round(rate * eligible.size)))
    targets = np.sort(rng.choice(eligible, size=n_targets, replace=False))
    action = rng.random(n_targets)
    to_mask = targets[action < 0.8]
    to_random = targets[(action >= 0.8) & (action < 0.9)]
    corrupted[to_mask] = mask_id
    if to_random.size:
        ordinary = np.setdiff1d(np.arange(vocab_size), special)
        corrupted[to_random] = rng.choice(ordinary, size=to_random.size)
    return corrupted, targets


@dataclass
class TrainingLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    stop_reason: str | None = None
    total_steps: int = 0
    best_epoch: int | None = None
    words_seen: int = 0
    tokens_seen: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


# objective -------------------------------------------------------------------


def _batch_targets(model: TransformerModel, blocks: np.ndarray, stream: TokenStream, seeds: Sequence[int]):
    """Inputs, attention mask and per-position labels (-100 = ignored) for one micro-batch."""
    ids = torch.from_numpy(blocks)
    attention = ids != stream.pad_id
    if model.kind == "decoder":
        labels = ids.clone()
        labels[~attention] = -100
        return ids, attention, labels
    inputs = ids.clone()
    labels = torch.full_like(ids, -100)
    for row, seed in enumerate(seeds):
        corrupted, targets = masking_policy(
            blocks[row], seed, mask_id=stream.mask_id, vocab_size=stream.vocab_size,
            special_ids=stream.special_ids,
        )
        inputs[row] = torch.from_numpy(corrupted)
        labels[row, targets] = ids[row, targets]
    return inputs, attention, labels


def _loss_terms(model: TransformerModel, inputs, attention, labels) -> tuple[torch.Tensor, int]:
    """Summed NLL over labelled positions and the number of such positions."""
    logits = model(inputs, attention)
    if model.kind == "decoder":
        logits = logits[:, :-1]
        labels = labels[:, 1:]
    n = int((labels != -100).sum())
    # bf16 logits are upcast; float64 (gradient checks) stays float64
    if logits.dtype in (torch.float16, torch.bfloat16):
        logits = logits.float()
    loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1),
                           ignore_index=-100, reduction="sum")
    return loss, n


def _mask_seed(seed: int, epoch: int, block_index: int) -> int:
    return (seed * 1_000_003 + epoch * 7919 + block_index) % (2**63)


def accumulated_gradients(model: TransformerModel, stream: TokenStream, micro_batches: list[np.ndarray],
                          epoch: int = 0, seed: int = 0) -> float:
    """Backpropagate mean per-token NLL over the union of ``micro_batches``.

    Each micro-batch contributes its summed loss divided by the group's total
    token count, so the accumulated gradient equals that of one big batch.
    Returns the mean loss.
    """
    prepared = []
    total = 0
    for idx in micro_batches:
        seeds = [_mask_seed(seed, epoch, int(i)) for i in idx]
        inputs, attention, labels = _batch_targets(model, stream.blocks[idx], stream, seeds)
        n = int((labels[:, 1:] != -100).sum()) if model.kind == "decoder" else int((labels != -100).sum())
        prepared.append((inputs, attention, labels))
        total += n
    if total == 0:
        return float("nan")
    loss_sum = 0.0
    for inputs, attention, labels in prepared:
        loss, n = _loss_terms(model, inputs, attention, labels)
        if n == 0:
            continue
        (loss / total).backward()
        loss_sum += float(loss.detach())
    return loss_sum / total


@torch.no_grad()
def evaluate_loss(model: TransformerModel, stream: TokenStream, indices: np.ndarray, batch_size: int,
                  seed: int = 0) -> float:
    """Mean per-token NLL on held-out blocks (fixed masking seeds for encoders)."""
    was_training = model.training
    model.eval()
    loss_sum, count = 0.0, 0
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        seeds = [_mask_seed(seed, -1, int(i)) for i in idx]
        inputs, attention, labels = _batch_targets(model, stream.blocks[idx], stream, seeds)
        loss, n = _loss_terms(model, inputs, attention, labels)
        loss_sum += float(loss.detach())
        count += n
    model.train(was_training)
    return loss_sum / max(count, 1)


def split_blocks(n_blocks: int, eval_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Held-out split: at least one evaluation block and one training block."""
    if n_blocks < 2:
        raise ValueError("need at least 2 blocks to hold out an evaluation split")
    perm = np.random.default_rng(seed).permutation(n_blocks)
    n_eval = min(max(1, int(round(eval_fraction * n_blocks))), n_blocks - 1)
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def steps_per_epoch(n_train_blocks: int, config: TrainingConfig) -> int:
    micro = math.ceil(n_train_blocks / config.batch_size)
    return math.ceil(micro / config.grad_accum_steps)


def _param_groups(model: TransformerModel, weight_decay: float) -> list[dict]:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        # biases and LayerNorm scales are exempt, as in the HF trainer
        if name.endswith("bias") or "norm" in name:
            no_decay.append(p)
        else:
            decay.append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


def train(model: TransformerModel, stream: TokenStream, config: TrainingConfig,
          checkpoint_dir: str | os.PathLike | None = None, progress=None,
          metadata: dict | None = None) -> tuple[TransformerModel, TrainingLog]:
    """Train in place and return ``(model, log)``.

    Evaluates once per epoch on a held-out split. The cosine schedule spans
    ``max_epochs`` up front, so an early stop simply truncates it. With
    ``checkpoint_dir`` set, writes ``epoch-N.ckpt``, ``last.ckpt`` and
    ``best.ckpt`` (lowest evaluation loss); ``metadata`` is copied into each.
    """
    if len(stream) == 0 or stream.n_tokens == 0:
        raise ValueError("cannot train on an empty token stream")
    if stream.block_length > model.config.max_length:
        raise ValueError("stream block_length exceeds the model's max_length")
    train_idx, eval_idx = split_blocks(len(stream), config.eval_fraction, config.seed)
    per_epoch = steps_per_epoch(len(train_idx), config)
    total_steps = per_epoch * config.max_epochs
    if total_steps < config.warmup_steps:
        raise TrainingConfigError(
            f"warmup_steps: {config.warmup_steps} exceeds the {total_steps} optimizer steps of this run"
        )
    torch.manual_seed(config.seed)
    optimizer = torch.optim.AdamW(
        _param_groups(model, config.weight_decay), lr=0.0, betas=config.adam_betas,
        eps=config.adam_eps,
    )
    autocast = (
        torch.autocast("cpu", dtype=torch.bfloat16) if config.reduced_precision else contextlib.nullcontext()
    )
    log = TrainingLog(total_steps=total_steps)
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    eval_losses: list[float] = []
    step = 0
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.max_epochs):
        model.train()
        order = train_idx[rng.permutation(len(train_idx))]
        micro = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        for g in range(0, len(micro), config.grad_accum_steps):
            group = micro[g:g + config.grad_accum_steps]
            lr = lr_at_step(config, step, total_steps)
            for pg in optimizer.param_groups:
                pg["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            with autocast:
                loss = accumulated_gradients(model, stream, group, epoch=epoch, seed=config.seed)
            if config.max_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
            optimizer.step()
            log.steps.append({"step": step, "epoch": epoch, "lr": lr, "loss": loss})
            if progress is not None:
                progress(log.steps[-1])
            step += 1
        log.tokens_seen += int(sum((stream.blocks[train_idx] != stream.pad_id).sum(axis=1)))
        log.words_seen += stream.words
        eval_loss = evaluate_loss(model, stream, eval_idx, config.batch_size, seed=config.seed)
        eval_losses.append(eval_loss)
        improved = log.best_epoch is None or eval_loss < min(eval_losses[:-1])
        if improved:
            log.best_epoch = epoch + 1
        log.epochs.append({"epoch": epoch + 1, "eval_loss": eval_loss, "last_step": step - 1})
        if ckpt is not None:
            meta = {**(metadata or {}), "epoch": epoch + 1, "eval_loss": eval_loss, "words_seen": log.words_seen,
                    "tokens_seen": log.tokens_seen}
            save_checkpoint(model, ckpt / f"epoch-{epoch + 1}.ckpt", meta)
            save_checkpoint(model, ckpt / "last.ckpt", meta)
            if improved:
                save_checkpoint(model, ckpt / "best.ckpt", meta)
        if should_stop(eval_losses, config.patience):
            log.stop_reason = "early_stop"
            break
    else:
        log.stop_reason = "max_epochs"
    model.eval()
    return model, log

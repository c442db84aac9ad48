"""Causal-decoder and masked-encoder transformers.

Two fixed convention sets:

* decoder (GPT-2 style): learned positions over ``max_length`` slots, pre-norm
  blocks, a final LayerNorm, tanh-approximated GELU and an untied, bias-free
  output projection.
* encoder (RoBERTa style): learned positions over ``max_length + 2`` slots
  (the first two are reserved, as in RoBERTa), an embedding LayerNorm,
  post-norm blocks, exact GELU and a dense -> GELU -> LayerNorm -> projection
  head whose projection carries a bias. No segment embeddings.

With the presets these reproduce 131,922,432 and 26,630,704 trainable
parameters. The encoder's feed-forward width (3072) is reconstructed: it is the
value that makes the encoder count come out exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import MISSING, asdict, dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

INIT_STD = 0.02
ENCODER_POSITION_OFFSET = 2


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: Literal["decoder", "encoder"]
    vocab_size: int
    max_length: int
    hidden: int
    heads: int
    layers: int
    intermediate: int
    tie_output: bool = False
    positional: Literal["learned"] = "learned"
    head_style: Literal["plain-projection", "dense+norm+projection"] | None = None
    dropout: float = 0.1
    layer_norm_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.head_style is None:
            default = "plain-projection" if self.kind == "decoder" else "dense+norm+projection"
            object.__setattr__(self, "head_style", default)
        self.validate()

    def validate(self) -> None:
        if self.kind not in ("decoder", "encoder"):
            raise ModelConfigError(f"kind: expected 'decoder' or 'encoder', got {self.kind!r}")
        for name in ("vocab_size", "max_length", "hidden", "heads", "intermediate"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ModelConfigError(f"{name}: must be a positive integer, got {v!r}")
        if not isinstance(self.layers, int) or self.layers < 0:
            raise ModelConfigError(f"layers: must be a non-negative integer, got {self.layers!r}")
        if self.hidden % self.heads:
            raise ModelConfigError(
                f"hidden: {self.hidden} is not divisible by heads={self.heads}"
            )
        if self.positional != "learned":
            raise ModelConfigError(f"positional: only 'learned' is supported, got {self.positional!r}")
        if self.head_style not in ("plain-projection", "dense+norm+projection"):
            raise ModelConfigError(f"head_style: unknown value {self.head_style!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError(f"dropout: must be in [0, 1), got {self.dropout!r}")

    @property
    def position_slots(self) -> int:
        return self.max_length + (ENCODER_POSITION_OFFSET if self.kind == "encoder" else 0)

    @property
    def head_bias(self) -> bool:
        return self.head_style == "dense+norm+projection"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ModelConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        required = {n for n, f in cls.__dataclass_fields__.items() if f.default is MISSING}
        missing = required - set(data)
        if missing:
            raise ModelConfigError(f"missing config field(s): {', '.join(sorted(missing))}")
        return cls(**data)


def decoder_preset(**overrides) -> ModelConfig:
    base = dict(kind="decoder", vocab_size=30_000, max_length=1024, hidden=768,
                heads=12, layers=12, intermediate=3072)
    base.update(overrides)
    return ModelConfig(**base)


def encoder_preset(**overrides) -> ModelConfig:
    base = dict(kind="encoder", vocab_size=30_000, max_length=512, hidden=256,
                heads=8, layers=6, intermediate=3072)
    base.update(overrides)
    return ModelConfig(**base)


def count_params(config: ModelConfig) -> int:
    """Closed-form trainable parameter count."""
    V, H, I = config.vocab_size, config.hidden, config.intermediate
    norm = 2 * H
    n = V * H + config.position_slots * H
    if config.kind == "encoder":
        n += norm
    per_layer = (3 * H * H + 3 * H) + (H * H + H) + (H * I + I) + (I * H + H) + 2 * norm
    n += config.layers * per_layer
    if config.kind == "decoder":
        n += norm
    if config.head_style == "dense+norm+projection":
        n += H * H + H + norm
    if not config.tie_output:
        n += V * H
    if config.head_bias:
        n += V
    return n


# modules ---------------------------------------------------------------------


class SelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        B, T, H = x.shape
        d = H // self.heads
        q, k, v = self.qkv(x).split(H, dim=-1)
        q = q.view(B, T, self.heads, d).transpose(1, 2)
        k = k.view(B, T, self.heads, d).transpose(1, 2)
        v = v.view(B, T, self.heads, d).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d) + bias
        att = self.drop(torch.softmax(scores, dim=-1))
        y = (att @ v).transpose(1, 2).reshape(B, T, H)
        return self.drop(self.out(y))


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        H = config.hidden
        self.pre_norm = config.kind == "decoder"
        self.attn = SelfAttention(H, config.heads, config.dropout)
        self.norm1 = nn.LayerNorm(H, eps=config.layer_norm_eps)
        self.fc_in = nn.Linear(H, config.intermediate)
        self.fc_out = nn.Linear(config.intermediate, H)
        self.norm2 = nn.LayerNorm(H, eps=config.layer_norm_eps)
        self.drop = nn.Dropout(config.dropout)
        self.approx = "tanh" if config.kind == "decoder" else "none"

    def mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc_out(F.gelu(self.fc_in(x), approximate=self.approx)))

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        if self.pre_norm:
            x = x + self.attn(self.norm1(x), bias)
            return x + self.mlp(self.norm2(x))
        x = self.norm1(x + self.attn(x, bias))
        return self.norm2(x + self.mlp(x))


class TransformerModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        H, V = config.hidden, config.vocab_size
        self.tok_emb = nn.Embedding(V, H)
        self.pos_emb = nn.Embedding(config.position_slots, H)
        self.emb_norm = nn.LayerNorm(H, eps=config.layer_norm_eps) if config.kind == "encoder" else None
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.layers))
        self.final_norm = nn.LayerNorm(H, eps=config.layer_norm_eps) if config.kind == "decoder" else None
        if config.head_style == "dense+norm+projection":
            self.head_dense = nn.Linear(H, H)
            self.head_norm = nn.LayerNorm(H, eps=config.layer_norm_eps)
        else:
            self.head_dense = None
            self.head_norm = None
        self.head_proj = nn.Linear(H, V, bias=config.head_bias)
        if config.tie_output:
            self.head_proj.weight = self.tok_emb.weight

    @property
    def kind(self) -> str:
        return self.config.kind

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Logits of shape ``(batch, time, vocab)`` for a batch of id rows."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        B, T = ids.shape
        if T > self.config.max_length:
            raise ValueError(f"input length {T} exceeds max_length {self.config.max_length}")
        offset = ENCODER_POSITION_OFFSET if self.kind == "encoder" else 0
        pos = torch.arange(offset, offset + T, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)
        if self.emb_norm is not None:
            x = self.emb_norm(x)
        x = self.drop(x)
        bias = self._attention_bias(T, attention_mask, x.dtype, ids.device)
        for block in self.blocks:
            x = block(x, bias)
        if self.final_norm is not None:
            x = self.final_norm(x)
        if self.head_dense is not None:
            x = self.head_norm(F.gelu(self.head_dense(x)))
        return self.head_proj(x)

    def _attention_bias(self, T, attention_mask, dtype, device) -> torch.Tensor:
        neg = torch.finfo(dtype).min
        bias = torch.zeros(1, 1, T, T, dtype=dtype, device=device)
        if self.kind == "decoder":
            causal = torch.ones(T, T, dtype=torch.bool, device=device).triu(1)
            bias = bias.masked_fill(causal, neg)
        if attention_mask is not None:
            keep = attention_mask.to(torch.bool)[:, None, None, :]
            bias = bias.masked_fill(~keep, neg)
        return bias


def init_parameters(model: TransformerModel, seed: int) -> None:
    """Normal(0, 0.02) weights, zero biases, unit LayerNorm scales; deterministic in ``seed``."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if isinstance(_owner(model, name), nn.LayerNorm):
                if name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.normal_(0.0, INIT_STD, generator=g)


def _owner(model: nn.Module, param_name: str) -> nn.Module:
    module = model
    for part in param_name.split(".")[:-1]:
        module = getattr(module, part)
    return module


def build_model(config: ModelConfig, seed: int = 0) -> TransformerModel:
    model = TransformerModel(config)
    init_parameters(model, seed)
    actual = sum(p.numel() for p in model.parameters() if p.requires_grad)
    expected = count_params(config)
    if actual != expected:  # pragma: no cover - guards the closed form
        raise AssertionError(f"parameter count {actual} != closed form {expected}")
    return model


def trainable_param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# inference primitives ----------------------------------------------------------


def _as_ids(ids) -> torch.Tensor:
    return torch.as_tensor(list(ids) if not torch.is_tensor(ids) else ids, dtype=torch.long)


@torch.no_grad()
def forward_causal(model: TransformerModel, ids: Sequence[int]) -> torch.Tensor:
    """Log-probability rows, one per input position: row t predicts token t+1."""
    if model.kind != "decoder":
        raise ValueError("forward_causal needs a decoder model")
    ids = _as_ids(ids)
    if ids.numel() == 0:
        raise ValueError("forward_causal needs at least one token")
    if ids.numel() > model.config.max_length:
        raise ValueError(f"input length {ids.numel()} exceeds max_length {model.config.max_length}")
    return torch.log_softmax(model(ids[None])[0], dim=-1)


@torch.no_grad()
def forward_mlm(model: TransformerModel, ids: Sequence[int], masked_positions: Sequence[int],
                mask_id: int | None = None) -> torch.Tensor:
    """Log-probability rows at ``masked_positions`` (bidirectional context)."""
    if model.kind != "encoder":
        raise ValueError("forward_mlm needs an encoder model")
    ids = _as_ids(ids)
    positions = [int(p) for p in masked_positions]
    for p in positions:
        if not 0 <= p < ids.numel():
            raise IndexError(f"masked position {p} out of range for length {ids.numel()}")
        if mask_id is not None and int(ids[p]) != mask_id:
            raise ValueError(f"position {p} does not hold the mask token")
    if not positions:
        return torch.empty(0, model.config.vocab_size)
    logits = model(ids[None])[0]
    return torch.log_softmax(logits[positions], dim=-1)


@dataclass
class NLL:
    total_nll: float
    token_count: int

    @property
    def perplexity(self) -> float:
        return math.exp(self.total_nll / self.token_count)


@torch.no_grad()
def causal_nll(model: TransformerModel, ids: Sequence[int], bos_id: int) -> NLL:
    """Sum of -log p(token | bos, prefix) over ``ids``."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot score an empty sequence")
    full = [bos_id] + ids
    logp = forward_causal(model, full[:-1])
    target = torch.tensor(ids)
    total = -logp.gather(1, target[:, None]).sum()
    return NLL(float(total), len(ids))


@torch.no_grad()
def pseudo_nll(model: TransformerModel, ids: Sequence[int], bos_id: int, eos_id: int, mask_id: int) -> NLL:
    """Sum over positions of -log p(token) with only that position masked."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot score an empty sequence")
    full = torch.tensor([bos_id] + ids + [eos_id])
    n = len(ids)
    batch = full.repeat(n, 1)
    positions = torch.arange(1, n + 1)
    batch[torch.arange(n), positions] = mask_id
    logits = model(batch)[torch.arange(n), positions]
    logp = torch.log_softmax(logits, dim=-1)
    total = -logp.gather(1, full[positions][:, None]).sum()
    return NLL(float(total), n)


@torch.no_grad()
def fill_mask(model: TransformerModel, ids: Sequence[int], masked_position: int, k: int,
              mask_id: int) -> list[tuple[int, float]]:
    """Top-``k`` (token id, probability) pairs, by descending probability then ascending id."""
    ids = list(ids)
    if not 0 <= masked_position < len(ids) or ids[masked_position] != mask_id:
        raise ValueError(f"no mask token at position {masked_position}")
    probs = forward_mlm(model, ids, [masked_position])[0].exp()
    return rank_tokens(probs, k)


def rank_tokens(scores: torch.Tensor, k: int) -> list[tuple[int, float]]:
    values = scores.tolist()
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return [(i, values[i]) for i in order[:k]]


# beam search -------------------------------------------------------------------


@dataclass(order=True)
class Hypothesis:
    sort_key: tuple = field(repr=False)
    tokens: tuple[int, ...] = field(compare=False)
    score: float = field(compare=False)
    finished: bool = field(compare=False, default=False)


def _key(score: float, tokens: tuple[int, ...]) -> tuple:
    # best first: higher score, then lexicographically lower token ids
    return (-score, tokens)


StepFn = Callable[[list[list[int]]], torch.Tensor]


def beam_search_fn(step: StepFn, prompt: Sequence[int], beams: int, max_new_tokens: int,
                   stop_ids: Sequence[int] = ()) -> list[tuple[list[int], float]]:
    """Beam search over any next-token log-probability function.

    ``step`` maps a list of token sequences to a ``(n, vocab)`` tensor of
    next-token log-probabilities. Returns up to ``beams`` continuations (prompt
    excluded) with their total log-probabilities, best first. Ties go to the
    lexicographically smaller token sequence, so ``beams=1`` is greedy decoding
    with lowest-id tie-breaking.
    """
    prompt = list(prompt)
    if not prompt:
        raise ValueError("beam search needs a non-empty prompt")
    if beams < 1:
        raise ValueError("beams must be >= 1")
    stop = set(stop_ids)
    live: list[Hypothesis] = [Hypothesis(_key(0.0, ()), (), 0.0)]
    done: list[Hypothesis] = []
    for _ in range(max_new_tokens):
        if not live:
            break
        # live scores only fall, so stop once enough finished hypotheses beat them all
        if len(done) >= beams:
            worst_kept = sorted(done)[beams - 1]
            if worst_kept.score > live[0].score:
                break
        logp = step([prompt + list(h.tokens) for h in live])
        candidates: list[Hypothesis] = []
        # only the best ``beams`` extensions of each hypothesis can survive;
        # a stable descending sort keeps the lower id first on ties
        order = torch.sort(logp, dim=-1, descending=True, stable=True).indices[:, :beams]
        for h, row, best in zip(live, logp.tolist(), order.tolist()):
            for tok in best:
                s = h.score + row[tok]
                toks = h.tokens + (tok,)
                candidates.append(Hypothesis(_key(s, toks), toks, s, tok in stop))
        candidates.sort()
        live = []
        for c in candidates[:beams]:
            (done if c.finished else live).append(c)
    ranked = sorted(done + live)[:beams]
    return [(list(h.tokens), h.score) for h in ranked]


def model_step_fn(model: TransformerModel) -> StepFn:
    if model.kind != "decoder":
        raise ValueError("beam search needs a decoder model")

    @torch.no_grad()
    def step(seqs: list[list[int]]) -> torch.Tensor:
        length = len(seqs[0])
        if length > model.config.max_length:
            raise ValueError("sequence grew past max_length")
        logits = model(torch.tensor(seqs))[:, -1]
        return torch.log_softmax(logits.double(), dim=-1)

    return step


def beam_search(model: TransformerModel, prompt_ids: Sequence[int], beams: int = 3,
                max_new_tokens: int = 12, stop_ids: Sequence[int] = ()) -> list[tuple[list[int], float]]:
    max_new = min(max_new_tokens, model.config.max_length - len(prompt_ids))
    return beam_search_fn(model_step_fn(model), prompt_ids, beams, max_new, stop_ids)


def greedy_decode(step: StepFn, prompt: Sequence[int], max_new_tokens: int,
                  stop_ids: Sequence[int] = ()) -> tuple[list[int], float]:
    seq = list(prompt)
    out: list[int] = []
    score = 0.0
    for _ in range(max_new_tokens):
        row = step([seq])[0]
        values = row.tolist()
        tok = min(range(len(values)), key=lambda i: (-values[i], i))
        score += values[tok]
        out.append(tok)
        seq.append(tok)
        if tok in stop_ids:
            break
    return out, score


# checkpoints -------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BABYCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: TransformerModel, path, metadata: dict | None = None) -> None:
    """Header (config + tensor table as JSON) followed by float32 little-endian blobs."""
    state = model.state_dict()
    tensors = []
    blobs = []
    offset = 0
    for name, t in state.items():
        if model.config.tie_output and name == "head_proj.weight":
            continue
        arr = t.detach().to(torch.float32).cpu().numpy().astype("<f4", copy=False)
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "config": model.config.to_dict(),
        "tensors": tensors,
        "trainable_params": trainable_param_count(model),
        "metadata": metadata or {},
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> dict:
    magic = fh.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a babylab checkpoint (bad magic)")
    version, n = struct.unpack("<IQ", fh.read(12))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    return json.loads(fh.read(n))


def load_checkpoint(path) -> tuple[TransformerModel, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        payload = fh.read()
    config = ModelConfig.from_dict(header["config"])
    model = TransformerModel(config)
    state = {}
    for entry in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=entry["nbytes"] // 4, offset=entry["offset"])
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    if config.tie_output:
        state["head_proj.weight"] = state["tok_emb.weight"]
    model.load_state_dict(state)
    n = trainable_param_count(model)
    if n != count_params(config) or n != header["trainable_params"]:
        raise ValueError(
            f"checkpoint parameter count {n} disagrees with its config ({count_params(config)})"
        )
    model.eval()
    return model, header.get("metadata", {})

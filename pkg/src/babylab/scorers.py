"""In-process scorer backed by a trained model and its tokenizer."""

from __future__ import annotations

from .model import TransformerModel, beam_search, causal_nll, fill_mask, load_checkpoint, pseudo_nll
from .tasks import MASK, ScorerError
from .tokenizer import TokenizerModel

# generation stops at sentence-final punctuation as well as at </s>
STOP_PUNCTUATION = (".", "!", "?")


class ModelScorer:
    """Decoders score with causal NLL and complete by beam search; encoders use
    pseudo-NLL and single-mask filling."""

    def __init__(self, model: TransformerModel, tokenizer: TokenizerModel, name: str = "model",
                 training_words: int | None = None):
        if model.config.vocab_size != tokenizer.vocab_size:
            raise ValueError(
                f"model vocab_size {model.config.vocab_size} != tokenizer vocab_size {tokenizer.vocab_size}"
            )
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.name = name
        self.training_words = training_words
        ops = {"nll", "complete"} if model.kind == "decoder" else {"nll", "fill_mask"}
        self.capabilities = frozenset(ops)
        self._stop_ids = self._find_stop_ids()

    @classmethod
    def from_checkpoint(cls, path, tokenizer: TokenizerModel | None = None) -> "ModelScorer":
        model, meta = load_checkpoint(path)
        if tokenizer is None:
            if "tokenizer" not in meta:
                raise ValueError(f"{path}: checkpoint carries no tokenizer; pass one explicitly")
            tokenizer = TokenizerModel.from_dict(meta["tokenizer"])
        return cls(model, tokenizer, name=str(path), training_words=meta.get("words_seen"))

    def _find_stop_ids(self) -> tuple[int, ...]:
        tok = self.tokenizer
        stops = {tok.eos_id}
        for i in range(tok.vocab_size):
            if i in tok.special_ids:
                continue
            text = tok.token_bytes(i).decode("utf-8", errors="ignore").strip()
            if text and text[-1] in STOP_PUNCTUATION:
                stops.add(i)
        return tuple(sorted(stops))

    def _check_length(self, n: int) -> None:
        limit = self.model.config.max_length - (2 if self.model.kind == "encoder" else 1)
        if n > limit:
            raise ScorerError(f"text is {n} tokens; the model accepts at most {limit}")

    def nll(self, text: str) -> tuple[float, int]:
        ids = self.tokenizer.encode(text)
        if not ids:
            raise ScorerError("cannot score empty text")
        self._check_length(len(ids))
        tok = self.tokenizer
        if self.model.kind == "decoder":
            r = causal_nll(self.model, ids, tok.bos_id)
        else:
            r = pseudo_nll(self.model, ids, tok.bos_id, tok.eos_id, tok.mask_id)
        return r.total_nll, r.token_count

    def complete(self, prompt: str, beams: int, max_new: int) -> tuple[str, float]:
        if self.model.kind != "decoder":
            raise ScorerError("completion needs a decoder")
        ids = [self.tokenizer.bos_id] + self.tokenizer.encode(prompt)
        if len(ids) >= self.model.config.max_length:
            raise ScorerError("prompt fills the whole context window")
        best, score = beam_search(self.model, ids, beams=beams, max_new_tokens=max_new,
                                  stop_ids=self._stop_ids)[0]
        text = self.tokenizer.decode(t for t in best if t not in self.tokenizer.special_ids)
        return text, score

    def fill_mask(self, text: str, k: int) -> list[tuple[str, float]]:
        if self.model.kind != "encoder":
            raise ScorerError("mask filling needs an encoder")
        tok = self.tokenizer
        if text.count(MASK) != 1:
            raise ScorerError(f"expected exactly one {MASK} in the prompt")
        ids = [tok.bos_id] + tok.encode_with_mask(text, MASK) + [tok.eos_id]
        self._check_length(len(ids) - 2)
        pos = ids.index(tok.mask_id)
        return [(tok.decode([i]), p) for i, p in fill_mask(self.model, ids, pos, k, tok.mask_id)]

    def first_piece(self, answer: str) -> str:
        """The first subword of ``answer`` as it would follow a space."""
        ids = self.tokenizer.encode(" " + answer.strip())
        return self.tokenizer.decode(ids[:1]) if ids else ""

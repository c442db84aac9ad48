import math
import sys

import pytest

from babylab.corpus import documents_to_stream
from babylab.model import ModelConfig, build_model
from babylab.synthetic import TOY_BLOCK_LENGTH, TOY_DECODER, TOY_TRAINING, TOY_VOCAB_SIZE, fixture_path
from babylab.tokenizer import train_tokenizer
from babylab.trainer import TrainingConfig, train


@pytest.fixture(scope="session")
def grammar():
    return fixture_path("toy_grammar.txt").read_text(encoding="utf-8").splitlines()


@pytest.fixture(scope="session")
def toy_tokenizer(grammar):
    return train_tokenizer(grammar, TOY_VOCAB_SIZE)


@pytest.fixture(scope="session")
def trained_toy(grammar, toy_tokenizer):
    """(model, log, stream) for the 2-epoch toy decoder run."""
    stream = documents_to_stream(grammar, toy_tokenizer, TOY_BLOCK_LENGTH, seed=0)
    model = build_model(ModelConfig(**TOY_DECODER), seed=0)
    model, log = train(model, stream, TrainingConfig(**TOY_TRAINING, seed=0),
                       metadata={"tokenizer": toy_tokenizer.to_dict()})
    return model, log, stream


class TableScorer:
    """Scorer whose perplexities come from a dict; unknown text gets ``default``."""

    name = "table"

    def __init__(self, ppl=None, default=10.0, completions=None, fail=(), capabilities=("nll", "complete")):
        self.ppl = dict(ppl or {})
        self.default = default
        self.completions = dict(completions or {})
        self.fail = set(fail)
        self.capabilities = frozenset(capabilities)

    def nll(self, text):
        from babylab.tasks import ScorerError

        if text in self.fail:
            raise ScorerError(f"scripted failure on {text!r}")
        return math.log(self.ppl.get(text, self.default)), 1

    def complete(self, prompt, beams, max_new):
        from babylab.tasks import ScorerError

        if prompt in self.fail:
            raise ScorerError("scripted failure")
        return self.completions.get(prompt, ""), 0.0

    def fill_mask(self, text, k):
        return [(self.completions.get(text, ""), 1.0)]


@pytest.fixture(scope="session")
def table_scorer():
    return TableScorer


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    outcomes = getattr(module, "OUTCOMES", None)
    if outcomes:
        terminalreporter.section("acceptance criteria")
        for n in sorted(outcomes):
            terminalreporter.write_line(outcomes[n])

"""Small developmental-scale language models and a child-language test harness."""

__version__ = "0.1.0"

from ._kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION  # noqa: E402
from .tokenizer import TokenizerModel, train_tokenizer  # noqa: E402

__all__ = ["KERNEL_IMPLEMENTATION", "TokenizerModel", "train_tokenizer", "__version__"]

"""libsuggest: a trainable sequence-to-sequence recommender that maps a
natural-language requirements description to a ranked list of third-party
libraries."""

__version__ = "0.1.0"

__all__ = [
    "corpus",
    "embeddings",
    "tensor",
    "model",
    "trainer",
    "decode",
    "metrics",
    "cli",
]

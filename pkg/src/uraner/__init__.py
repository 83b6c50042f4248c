"""Retrieval-augmented fine-grained multilingual NER at desk scale."""

__version__ = "0.1.0"

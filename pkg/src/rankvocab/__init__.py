"""Vocabulary selection by PageRank over word similarity, and a TextCNN with branch attention."""

__version__ = "0.1.0"

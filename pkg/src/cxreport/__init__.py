"""Weakly-supervised image-to-report toolkit.

Trains a dense convolutional encoder plus an attention-gated LSTM decoder on
(image, report) pairs, decodes with beam search, scores with the consensus
metric, and runs a blind human-scoring protocol over HTTP.
"""

__version__ = "0.1.0"

"""LSTM/BLSTM/feed-forward sequence networks trained by full BPTT."""

from .network import (
    LstmLayerParams,
    SequenceNetwork,
    blstm_forward,
    bptt_gradients,
    lstm_forward,
    network_forward,
    pad_batch,
)

__all__ = [
    "LstmLayerParams", "SequenceNetwork", "blstm_forward", "bptt_gradients", "lstm_forward",
    "network_forward", "pad_batch",
]

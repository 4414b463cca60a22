"""Speech enhancement and dereverberation front-end with LSTM language-model rescoring."""

__version__ = "0.1.0"

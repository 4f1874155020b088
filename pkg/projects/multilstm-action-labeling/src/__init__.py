"""Dense multilabel action labeling with a windowed-attention LSTM."""

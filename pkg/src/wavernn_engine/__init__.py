"""WaveRNN engine: training, pruning, block-sparse kernels and subscale sampling."""

__version__ = "0.1.0"

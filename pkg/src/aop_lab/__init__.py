"""Average-of-Pruning laboratory."""

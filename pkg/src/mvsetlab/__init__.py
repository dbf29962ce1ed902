"""Mean value sets on discretized Riemannian surfaces."""

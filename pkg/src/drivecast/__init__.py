"""Driver speed-profile forecasting over a known route.

Pipeline: route geometry -> TMC traffic-history extraction -> GPS trip
reduction to velocity profiles -> feature assembly -> stacked-autoencoder
network -> sweep harness with non-learned baselines.
"""

__version__ = "0.1.0"

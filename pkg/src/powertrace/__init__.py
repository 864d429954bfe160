"""Vehicle power consumption prediction toolkit.

Ingests multi-rate powertrain telemetry, trains sequence models and a
random-forest baseline to predict instantaneous power, integrates the
predictions into cumulative energy, and quantifies prediction spread with
Monte Carlo ensembles.
"""

__version__ = "0.1.0"

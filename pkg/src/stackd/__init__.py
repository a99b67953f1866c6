"""stackd: Bayesian model-combination weights from pointwise log likelihoods.

Core modules:

- :mod:`stackd.scores` -- proper scoring rules (larger is better);
- :mod:`stackd.psis` -- Pareto-smoothed importance sampling LOO;
- :mod:`stackd.weights` -- stacking, BMA, pseudo-BMA(+), pointwise selection;
- :mod:`stackd.sequential` -- prequential and time-varying weights;
- :mod:`stackd.simlab` -- closed-form oracles and synthetic experiments;
- :mod:`stackd.service` -- FastAPI wrapper with pydantic schemas;
- :mod:`stackd.cli` -- thin command-line client over the service handlers.
"""

__version__ = "0.1.0"

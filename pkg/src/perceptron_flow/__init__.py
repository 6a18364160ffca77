"""Flow equations for the learning dynamics of a nonlinear perceptron.

Closed-form expected updates (drifts) for supervised cross-entropy SGD and
REINFORCE with an erf-sigmoid output, their mean and covariance flows, a Monte
Carlo simulator of the online rules, and drivers for the numerical experiments.
"""

__version__ = "0.1.0"

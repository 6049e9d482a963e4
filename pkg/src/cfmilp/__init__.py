"""Plausible counterfactual explanations for tabular credit classifiers.

The package turns a trained classifier, a reference sample of accepted
applicants, and a per-feature action grid into a mixed-integer program whose
objective trades off a Mahalanobis-style distance against a local-outlier
penalty.  Two interchangeable encodings of the nearest-neighbor selection are
provided (a quadratic-size one and a linear-size big-M one) together with a
small exact branch-and-bound solver, so the whole pipeline runs without any
external MIP dependency.
"""

__version__ = "0.1.0"

from . import actionspace, bench, classifiers, data, formulations, milpcore, solver, stats

__all__ = [
    "actionspace",
    "bench",
    "classifiers",
    "data",
    "formulations",
    "milpcore",
    "solver",
    "stats",
    "__version__",
]

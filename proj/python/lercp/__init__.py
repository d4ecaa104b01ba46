"""Python bindings for the lercp C++ core."""

import json

from ._core import *  # noqa: F401,F403
from ._core import run_experiment_json


def run_experiment(manifest, method="cp", alpha=0.1, seed=0, unit_gamma=False):
    """Split, train, calibrate and evaluate; returns the report as a dict."""
    return json.loads(run_experiment_json(str(manifest), method, alpha, seed, unit_gamma))

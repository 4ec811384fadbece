"""Adversarial transferability experiments on traffic images."""

import json

from ._frshield import (
    Config,
    FrshieldError,
    Model,
    attack,
    attack_names,
    build_report,
    draw_subsets,
    match_score,
    mismatch_score,
    perturbation_metrics,
    rbf_kernel,
    run_stage,
    security_verdict,
    svm_fit_predict,
    synth_generate,
)
from . import _frshield

__all__ = [
    "Config",
    "FrshieldError",
    "Model",
    "attack",
    "attack_names",
    "build_report",
    "draw_subsets",
    "match_score",
    "mismatch_score",
    "perturbation_metrics",
    "rbf_kernel",
    "run_experiment",
    "run_stage",
    "security_verdict",
    "svm_fit_predict",
    "synth_generate",
    "report",
]

PRISTINE = 0
MANIPULATED = 1


def run_experiment(config):
    """Run every configured stage and return the report summary as a dict."""
    return json.loads(_frshield.run_experiment(config))


def report(config):
    """Report summary rebuilt from the stage results already on disk."""
    return json.loads(build_report(config))

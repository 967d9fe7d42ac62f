"""Coupled treatment-assignment designs: matching, couplings, transport and analysis."""

import csv
import io
import json

from ._couplekit import (
    SCHEMA_VERSION,
    NumericalError,
    ValidationError,
    dispersion_closed_form,
    fit_semidiscrete,
    match_k_tuples,
    sample_uniforms,
    worst_case_rate,
)
from . import _couplekit

__all__ = [
    "SCHEMA_VERSION",
    "NumericalError",
    "ValidationError",
    "analyze",
    "design",
    "dispersion_closed_form",
    "fit_semidiscrete",
    "match_k_tuples",
    "sample_uniforms",
    "simulate",
    "sweep",
    "worst_case_rate",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def simulate(config, base_dir="."):
    """Runs every configured design and returns the report as a dict."""
    return json.loads(_couplekit.simulate_json(_dump(config), base_dir))


def analyze(config, base_dir="."):
    return json.loads(_couplekit.analyze_json(_dump(config), base_dir))


def sweep(config, base_dir="."):
    """Rows of the k sweep as dicts of floats."""
    text = _couplekit.sweep_csv(_dump(config), base_dir)
    return [{key: float(value) if value else None for key, value in row.items()} for row in csv.DictReader(io.StringIO(text))]


def design(config, base_dir="."):
    """One matched assignment as a list of dicts (unit, group, position, u*, d*, cell)."""
    text = _couplekit.design_csv(_dump(config), base_dir)
    return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(io.StringIO(text))]

"""Multiscale flatness coefficients, dyadic lattices and corona decompositions of point clouds."""

import json as _json

from ._rectiscope import (
    Cloud,
    CoefficientTable,
    ConfigError,
    Lattice,
    ParseError,
    SolverError,
    StaleArtifactError,
    ahlfors_profile,
    alpha,
    bbeta1,
    bbetainf,
    bl_norm,
    bl_norm_oracle,
    build_lattice,
    carleson_sup,
    coefficient_table,
    corona,
    delta_ur_scan,
    gamma_global,
    gen_half_plane,
    gen_lipschitz_graph,
    gen_plane,
    gen_snowflake,
    gen_sphere,
    gen_two_planes,
    osc,
    snowflake_length_factor,
    verify_lattice,
    with_density,
)
from . import _rectiscope

STAGES = ("generate", "lattice", "coeffs", "corona", "carleson", "verify", "report")


def config_hash(config):
    return _rectiscope.config_hash(_json.dumps(config))


def normalized_config(config):
    return _json.loads(_rectiscope.normalized_config(_json.dumps(config)))


def run_stage(config, stage):
    return _rectiscope.run_stage(_json.dumps(config), stage)


def run_pipeline(config):
    """Runs every stage in order and returns the parsed summary."""
    for s in STAGES:
        run_stage(config, s)
    with open(f"{config.get('output', 'rectiscope_out')}/summary.json") as f:
        return _json.load(f)

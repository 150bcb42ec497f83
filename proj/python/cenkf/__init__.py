"""Constrained ensemble Kalman filtering for the ultradian glucose-insulin model."""

from ._cenkf import (
    ConfigError,
    DomainError,
    IntegrationError,
    QpError,
    SchemaError,
    cli,
    constraint_experiments,
    generate_twin,
    kalman_update,
    mse_after_24h,
    nominal_params,
    omega,
    qp_solve,
    run_experiment,
    simulate,
    validate_timeline,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "IntegrationError",
    "QpError",
    "SchemaError",
    "cli",
    "constraint_experiments",
    "generate_twin",
    "kalman_update",
    "mse_after_24h",
    "nominal_params",
    "omega",
    "qp_solve",
    "run_experiment",
    "simulate",
    "validate_timeline",
]

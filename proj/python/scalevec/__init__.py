"""Scale-vector RMSNorm dynamics laboratory."""

from ._core import (
    ScalevecError,
    balanced_teacher,
    block_forward,
    block_gradient_check,
    classify_norms,
    count_params,
    euler_maruyama,
    experiments,
    gronwall_bound,
    hessian_sharpness,
    random_unit_teacher,
    run_config,
    run_dp_matching_support,
    run_thm1,
    run_thm4,
    sgd_descent_expansion,
    sphere_normalize,
)

__all__ = [
    "ScalevecError",
    "balanced_teacher",
    "block_forward",
    "block_gradient_check",
    "classify_norms",
    "count_params",
    "euler_maruyama",
    "experiments",
    "gronwall_bound",
    "hessian_sharpness",
    "random_unit_teacher",
    "run_config",
    "run_dp_matching_support",
    "run_thm1",
    "run_thm4",
    "sgd_descent_expansion",
    "sphere_normalize",
]

"""Heat flow and curvature verification on singular time-dependent weighted graphs.

The package simulates the heat equation on finite weighted graphs whose
structure changes at singular times (vertices collapse or spawn, edge
weights blow up or vanish) and numerically certifies or refutes the
super-Ricci-flow property through four equivalent criteria: a dynamic
Bochner inequality, a heat-flow gradient estimate, a transport estimate for
the discrete Benamou-Brenier distance, and dynamic convexity of the
relative entropy along geodesics.

Modules
-------
chain      static Markov-triple primitives (log mean, Laplacians, Gamma forms)
schedule   time-dependent flows: rate schedules, singular transitions, builtins
heatflow   heat propagator on functions and dual propagator on measures
transport  discrete transport distance: primal solver, dual certificates
curvature  numerical verifiers for the four criteria and reverse Poincare
scenario   JSON scenario documents
cli        command-line interface
"""

from srflow.chain import (
    MarkovTriple,
    log_mean,
    log_mean_partials,
    lambda_weights,
    laplacian,
    adjoint_laplacian,
    gamma,
    gamma2,
    dt_gamma,
    entropy,
    two_point_triple,
    product_triple,
)
from srflow.schedule import SingularFlow, builtin_scenario, product_flow, validate_flow
from srflow.heatflow import propagate, propagate_dual, singular_transition_apply
from srflow.transport import (
    action,
    primal_w2,
    dual_w2_lower,
    geodesic,
    metric_tensor,
    hj_max_violation,
)
from srflow.curvature import (
    bochner_gap,
    check_bochner,
    static_ricci_bound,
    check_gradient_estimate,
    check_transport_estimate,
    check_dynamic_convexity,
    check_reverse_poincare,
    verify_srf,
)

__version__ = "0.1.0"

"""Learned modified vector fields for one-step integrators.

A numerical method of order p applied to a perturbed field

    f_app(y, h) = f(y) + h^p (corrections)

can follow the exact flow of ``f`` far more accurately than the method
alone.  This package provides the analytic correction terms (Taylor-jet
based) for Euler and RK2, a numerical probe for the implicit midpoint
rule, neural-network approximations of the corrections trained through
the integrator step, rigorous error diagnostics, and a benchmark CLI.
"""

from .errors import (ConditioningError, ConditioningWarning,
                     FixedPointError, IntegrationFailureError,
                     ModfieldError, StageOverflowError,
                     TrainingDivergedError, UnsupportedTruncationError)
from .integrators import (ButcherTableau, ErrorBoundInputs, Trajectory,
                          adaptive_flow_batch, box_grid, canonical_scheme,
                          dopri5_integrate, estimate_lipschitz, get_stepper,
                          get_tableau, implicit_midpoint_step, integrate,
                          order_estimate, rk_step, scheme_names,
                          theorem_bound)
from .jets import Jet, directional_derivative
from .modified_field import (TruncatedModifiedField, euler_term,
                             extract_first_correction, midpoint_field_probe,
                             midpoint_odd_coefficients, rk2_term,
                             truncated_field)
from .neural import (AdamState, MlpParams, ModifiedFieldModel, adam_update,
                     init_model, load_model, mlp_forward, mlp_init,
                     model_eval, save_model, scheme_step, step_loss,
                     step_loss_and_grad)
from .systems import (DomainBox, VectorFieldSpec, get_system, pendulum_field,
                      reference_flow, reference_trajectory, rigid_body_field,
                      sample_domain, system_names)
from .training import (Dataset, DatasetRecord, LossReport, TrainConfig,
                       alt_extract_targets, alt_train,
                       build_alt_training_data, generate_dataset, get_preset,
                       learning_error_delta, load_config, load_dataset,
                       parse_config, save_config, save_dataset,
                       split_dataset, train)

__version__ = "0.1.0"

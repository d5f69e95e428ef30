"""Polynomial SLS: Taylor models, symbolic disturbance-feedback synthesis,
stability certificates, neural gain tuning and a feedback-linearization baseline."""

from .alphanet import (AlphaNet, GradReport, TrainConfig, alphas_for_time, grad_check, layer_dims_for,
                       net_forward, net_init, rollout_loss, saturated_net, train)
from .baselines import (RiccatiError, RiccatiSolution, const_alpha_controller, dare_solve, fbl_control,
                        fbl_controller, riccati_residual)
from .experiment import ExperimentConfig, comparison_rows, report_json, run_experiment, write_outputs
from .harness import (DisturbanceSpec, FblPolicy, RolloutResult, SlsPolicy, gen_disturbances, quadratic_cost,
                      rollout, simulate, simulate_batch)
from .poly import (ALPHA, ONE_MINUS_ALPHA, AlphaFactor, Monomial, Polynomial, PolyDynamics, VarId, kron_power,
                   poly_eval, poly_substitute, truncate_by_age)
from .synth import (CostBound, GTerm, SlsController, StabilityCert, SynthesisError, alpha_history, check_iss,
                    compute_l_c, control_input, cost_bound_u1, predict_state, reconstruct_disturbance,
                    synthesize, u1_closed_form, u1_series)
from .systems import PointMassConfig, builtin, cubic2, point_mass, polynomial_plant, scalar_quadratic, sine_plant
from .taylor import (RemainderModel, SmoothDynamics, estimate_deriv_bound, lagrange_remainder, taylor_expand,
                     uniform_deriv_bound)

__version__ = "0.1.0"

"""Numerical laboratory for the kinetic chemotaxis forward model and the
reconstruction of its damping coefficient and tumbling kernel from
macroscopic density measurements."""

from .errors import (AdmissibilityError, CatalogError, ConfigurationError,
                     DomainError, GeometryError, NumericsError, ProbeError,
                     TumblerecError)
from .fields import (KernelField, ModelConfig, SigmaField, builtin_fields,
                     builtin_kernel, builtin_sigma, constant_model,
                     line_integral_sigma, sigma_from_kernel,
                     validate_admissible)
from .geometry import (StereographicChart, TumbleGeometry, chart,
                       domain_thresholds, jacobian_S, jacobian_j, project,
                       scatter_map, solve_tumble_point, sphere_quadrature,
                       unproject, zeta_omega)
from .probes import (BumpProfile, BumpSet, KProbe, SigmaProbe,
                     build_k_probe, build_sigma_probe, c_phipsi, eval_phi,
                     eval_psi, make_bump, phi_total_mass, velocity_mass)
from .solver import (CollisionEvaluator, ParticleEnsemble, QuadratureSpec,
                     eval_f0, eval_f1, eval_fn_mc, eval_rho, remainder_bound,
                     simulate_particles)
from .measurement import (MeasurementResult, integrate_against_psi, measure,
                          measure_particle, measure_tail_mc)
from .reconstruction import (LadderReport, LadderSpec, lemma_diagnostics,
                             recover_line_integral, recover_sigma_point,
                             run_k_ladder, run_sigma_ladder)
from .config import ExperimentConfig, validate_config

__version__ = "0.1.0"

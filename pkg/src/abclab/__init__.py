"""Numerical laboratory for approximation-by-conjugacy pseudo-rotations.

Builds transitive-pseudo-rotation approximations on the cylinder at finite
stages — exact rational angle bookkeeping, certified density/separation/
growth ladders, symplectic Hamiltonian conjugators — together with the
surface lifts, the bump-glue/volume-correction pipeline for entire
symplectic maps, and finite-difference complex-structure diagnostics.
"""

__version__ = "0.1.0"

from .errors import (AbcLabError, CertificateFailure, IntegratorError,
                     MissingStage, OriginError, PoleError, QuadratureError,
                     RangeError, SearchExhausted, SingularJacobian,
                     UnknownCheck, WitnessNotFound)
from .geometry import (ComplexCylinderPoint, ComplexDiskPoint,
                       ComplexSpherePoint, CylinderPoint, DiskPoint,
                       DomainSpec, SpherePoint, axial_project,
                       axial_unproject, cyl_distance, disk_involution,
                       domain_contains, polar_project, polar_unproject)
from .rational import RationalAngle, farey_separation, liouville_budget
from .flows import FlowConfig
from .maps import (Compose, HamFlow, Inverse, MapExpr, Rotation, Shear,
                   Twist, commutation_residual, compose, evaluate,
                   evaluate_batch, ham_time_one, inverse, jacobian,
                   serialize, deserialize)
from .engine import (EnginePolicy, SchemeStage, ShiftedAngle, SurfaceLift,
                     choose_next_alpha, covering_radius, initial_stage,
                     lift_to_surface, liouville_certificate, make_conjugator,
                     periodic_separation, select_nu, step,
                     transitivity_witness)
from .gluing import (BumpProfile, EntireMapSpec, GlueReport, GluedMap,
                     blend, area_density, default_entire_family,
                     glue_and_report, volume_correction)
from .diagnostics import (ConvergenceTracker, FormSample, Frame4Point,
                          StructureSample, cauchy_riemann_residual,
                          convergence_tracker, holomorphic_form_residual,
                          nijenhuis_residual, pullback_structure,
                          sigma_residuals)
from .config import ExperimentConfig
from .persistence import RunDirectory, RunManifest, export_orbit, run

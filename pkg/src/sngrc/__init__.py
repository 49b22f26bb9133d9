"""Stochastic next-generation reservoir computing.

SDE simulation (:mod:`sngrc.sde`), NG-RC features and ridge training
(:mod:`sngrc.features`), inverse-model tracking control (:mod:`sngrc.control`),
Kramers-Moyal + Lasso identification (:mod:`sngrc.sysid`), metrics
(:mod:`sngrc.metrics`) and the experiment pipelines behind the ``sngrc`` CLI.
"""

from ._accel import BACKEND
from .control import (ControlLog, DesiredTrajectory, GainMatrix, PerturbationSignal, closed_loop_run,
                      control_input, make_desired, make_perturbation, static_trigger)
from .errors import (BadInput, ClampRejected, DimensionMismatch, InsufficientHistory, IntegrationBlowup,
                     RankDeficientInputGain, SingularFitError, SngrcError)
from .features import (FeatureConfig, FeatureVector, WeightBlocks, assemble_design, build_features,
                       predict_step, ridge_fit, select_alpha)
from .metrics import DensityEstimate, RmseReport, SweepGrid, kde, rmse, run_sweep
from .sde import (NoiseDraw, SdeSystem, TimeGrid, Trajectory, check_timestep, euler_maruyama_step,
                  polynomial_sde, simulate, vdp_additive, vdp_multiplicative)
from .sysid import KmEstimates, SparseSdeFit, evaluate_fit, fit_sde, km_targets, lasso_fit

__version__ = "0.1.0"

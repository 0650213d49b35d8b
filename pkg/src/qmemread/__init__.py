"""Readout of a collective single-excitation cold-atom quantum memory.

Closed-form photon wavepackets with an independent ODE cross-check,
cooperativity from ensemble geometry, detection-log statistics, and a
global least-squares fitting layer, all behind one CLI.
"""

__version__ = "0.1.0"

from .params import (DEFAULT_GAMMA_NAT_MHZ, DEFAULT_TAU_US, FrequencyValue,
                     IntensityModel, ParamError, ReadoutParams,
                     angular_to_mhz, mhz_to_angular, rabi_from_intensity,
                     to_angular, validate)
from .wavepacket import (AlphaPair, ConvergenceError, SweepCurve,
                         WavepacketCurve, alpha_pair, amplitude_B,
                         detuning_spectrum, integrate_Pc, pc_at, pc_curve,
                         pc_integral_fixed, saturation_curve)
from .dynamics import (AmplitudeTrajectory, IntegrationError, evolve,
                       norm_decay_check, reconstruct_B)
from .collective import (ChiEstimate, EnsembleGeometry, QuadratureError,
                         branching_ratio, chi_closed_form, chi_monte_carlo,
                         chi_quadrature, chi_quadrature_kernel,
                         extraction_ceiling, pair_kernel)
from .counting import (BinnedWavepacket, CorrelationSummary, DetectionEvent,
                       EventStore, ModelError, StatsError, SynthDesign,
                       conditional_wavepacket, correlations, ingest,
                       probabilities, synthesize_log, write_log)
from .fitting import (Dataset, FitResult, RankDeficiencyError, fit,
                      model_eval, profile, residuals)

"""Brownian multiplicative chaos from planar local times."""

from .rng import RngStream, rng_stream_for, stream_id, substream
from .domains import Disc, Square, domain_from_dict
from .bessel import (BesselParams, BridgeSpec, PathSample, besq_transition_density,
                     besq_transition_sample, bessel_bridge_0dim_sample, bessel_path_sample,
                     modified_bessel_i, rn_derivative_bessel)
from .localtimes import (RadialProfile, circle_local_time_estimate, exact_radial_cascade,
                         h_field_interpolate, hitting_probability_estimate,
                         simulate_path_until_exit)
from .chaos import (ChaosField, ChaosParams, ChaosTotals, convergence_diagnostics, eps_gamma,
                    good_event_masks, measure_derivative, measure_derivative_restricted,
                    measure_seneta_heyde, measure_subcritical)
from .report import ExperimentReport, Verdict, write_report
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"

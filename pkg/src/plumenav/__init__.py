"""plumenav: seedable UAV odor-source localization simulation stack."""

from .agents import (Action, BandThresholds, OioAgent, OioParams, TabularAgent,
                     encode_state, expected_sarsa_lambda_update, q_lambda_update,
                     select_action, train)
from .env import MiniPlumeEnv, Observation, PlumeEnv
from .filters import (BoutSignal, EmaState, FilterBank, HeadingEstimate,
                      HeadingMode, ScalarKalman, ema_update, estimate_lag,
                      heading_from_lag)
from .kernels import NUMBA_ENABLED
from .mission import (SuiteMetrics, TrialConfig, TrialRecord, run_suite,
                      run_trial, vision_confirm)
from .plume import (BlankSchedule, Course, PlumeConfig, PlumeField,
                    build_course, insert_blanks)
from .sensors import (EcParams, EcSensor, MoxParams, MoxSensor, SensorReading,
                      StereoGeometry, cottrell_current, ec_fast_infer,
                      mox_resistance, sample_stereo)
from .termination import (SourceEstimate, SourceTracker, confidence_interval,
                          point_estimate, should_terminate)

__version__ = "0.1.0"

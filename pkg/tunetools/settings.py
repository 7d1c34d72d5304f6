"""
tune-tools
Copyright (c) 2026 The tune-tools authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""
import logging

logger = logging.getLogger(__name__)

# These default settings have two purposes:
#    1) Give a template for writing a local "tune_settings.py"
#    2) Give default initialization fields for the configuration classes

##############################################################################
# Surrogate Settings
##############################################################################
SURROGATE_KIND = "polynomial"
POLYNOMIAL_DEGREE = 3
RATIONAL_NUM_DEGREE = 3
RATIONAL_DEN_DEGREE = 1
RATIONAL_REWEIGHT = True
RATIONAL_MAX_SWEEPS = 20
RATIONAL_SWEEP_TOL = 1e-10

##############################################################################
# Inner (chi2) Optimization Settings
##############################################################################
MULTISTARTS = 100
MAX_ITERATIONS = 500
GRADIENT_TOL = 1e-8

##############################################################################
# Outer (bilevel) Optimization Settings
##############################################################################
N_MAX = 1000
NU_CYCLE = (0.3, 0.5, 0.8, 0.95)
RISK_AVERSION = 1.0
# candidates drawn per observable when proposing a weight vector
N_CAND_PER_OBSERVABLE = 500

##############################################################################
# Robust Optimization Settings
##############################################################################
MU_COUNT = 100
ROBUST_EPSILON = 0.0
COMPASS_STEP = 0.25
COMPASS_TOL = 1e-10
COMPASS_MAX_EVALS = 20000
TAU_MIN = 1e-3
TAU_MAX = 1e3
TAU_COUNT = 200

##############################################################################
# Filter Settings
##############################################################################
FILTER_MODE = "none"
ALPHA = 0.05
ZSCORE_THRESHOLD = 3.0

##############################################################################
# Evaluation Settings
##############################################################################
GAMMA = 0.01

##############################################################################
# Run Settings
##############################################################################
SEED = 0
# Number of worker processes. 0 means auto (based on host system cores)
JOBS = 1

##############################################################################
# Private Settings
##############################################################################
try:
    # Allow to overwrite the default settings without the need to edit the
    # settings file stored in the repository
    from tune_settings import *
except ImportError:
    logger.debug('Using default settings. Define your settings in the file "./tune_settings.py"')

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

# Run configuration: one declarative document (YAML, or JSON which YAML reads
# as well) with defaults taken from settings.py. Command line flags override
# single fields through dotted keys such as "outer.n_max".
import logging
from copy import deepcopy
from os.path import isfile
from collections import OrderedDict

import yaml

from tunetools import settings
from tunetools.utils import TuneException
from tunetools.data_model import METHODS
from tunetools.surrogate import SURROGATE_KINDS
from tunetools.filtering import FILTER_MODES
from tunetools.chi2 import Chi2Config
from tunetools.bilevel import OuterConfig
from tunetools.robust import RobustConfig

logger = logging.getLogger(__name__)


class ConfigException(TuneException):
    pass


def default_config():
    return OrderedDict([
        ("reference", None),
        ("mc_runs", None),
        ("output_dir", "tune_output"),
        ("surrogate", OrderedDict([
            ("kind", settings.SURROGATE_KIND),
            ("degree", settings.POLYNOMIAL_DEGREE),
            ("num_degree", settings.RATIONAL_NUM_DEGREE),
            ("den_degree", settings.RATIONAL_DEN_DEGREE),
            ("reweight", settings.RATIONAL_REWEIGHT),
        ])),
        ("filter", OrderedDict([
            ("mode", settings.FILTER_MODE),
            ("alpha", settings.ALPHA),
            ("threshold", settings.ZSCORE_THRESHOLD),
            ("envelope", False),
        ])),
        ("method", "all-weights-equal"),
        ("inner", OrderedDict([
            ("multistarts", settings.MULTISTARTS),
            ("max_iterations", settings.MAX_ITERATIONS),
            ("gtol", settings.GRADIENT_TOL),
        ])),
        ("outer", OrderedDict([
            ("n0", None),
            ("n_max", settings.N_MAX),
            ("n_cand", None),
            ("nu_cycle", list(settings.NU_CYCLE)),
            ("lambda", settings.RISK_AVERSION),
        ])),
        ("robust", OrderedDict([
            ("mu_count", settings.MU_COUNT),
            ("mus", None),
            ("epsilon", settings.ROBUST_EPSILON),
        ])),
        ("evaluation", OrderedDict([
            ("gamma", settings.GAMMA),
            ("taus", None),
        ])),
        ("seed", settings.SEED),
        ("jobs", settings.JOBS),
    ])


ENUMS = {
    "surrogate.kind": SURROGATE_KINDS,
    "filter.mode": FILTER_MODES,
    "method": METHODS,
}

FILES = ["reference", "mc_runs"]


def yaml_file_to_dict(fname):
    try:
        with open(fname, "rt") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            raise ConfigException("Parse error in '%s' at line %d column %d: %s"
                                  % (fname, mark.line + 1, mark.column + 1, getattr(e, "problem", e)))
        raise ConfigException("Parse error in '%s': %s" % (fname, e))
    except IOError as e:
        raise ConfigException("Can't read config '%s': %s" % (fname, e.strerror))
    if data is None:
        return OrderedDict()
    if not isinstance(data, dict):
        raise ConfigException("Config '%s' must be a mapping of keys to values" % fname)
    return data


class RunConfig(object):
    """ The effective configuration of a run """

    def __init__(self, data=None, source="<config>"):
        self.source = source
        self.data = default_config()
        self.merge(data or {})

    @staticmethod
    def load(path):
        return RunConfig(yaml_file_to_dict(path), source=path)

    def merge(self, data):
        unknown_keys = set(data.keys()) - set(self.data.keys())
        if unknown_keys:
            raise ConfigException("Unknown key(s) '%s' in %s" % (",".join(sorted(unknown_keys)), self.source))
        for key, value in data.items():
            section = self.data[key]
            if isinstance(section, dict):
                if not isinstance(value, dict):
                    raise ConfigException("'%s' in %s must be a mapping" % (key, self.source))
                unknown_keys = set(value.keys()) - set(section.keys())
                if unknown_keys:
                    raise ConfigException("Unknown key(s) '%s' in section '%s' of %s"
                                          % (",".join(sorted(unknown_keys)), key, self.source))
                section.update(value)
            else:
                self.data[key] = value

    def override(self, overrides):
        """ Apply dotted-key overrides; None values leave the field unchanged """
        for key, value in overrides.items():
            if value is None:
                continue
            path = key.split(".")
            if path[0] not in self.data or (len(path) == 2 and path[1] not in self.data[path[0]]):
                raise ConfigException("Unknown config key '%s'" % key)
            if len(path) == 1:
                self.data[key] = value
            else:
                self.data[path[0]][path[1]] = value
        return self

    def get(self, key):
        value = self.data
        for part in key.split("."):
            value = value[part]
        return value

    def __getitem__(self, key):
        return self.get(key)

    def validate(self, required=()):
        """ Check enum values, referenced files and the numerical sections.
            required: keys that must be set for the command at hand.
        """
        for key, allowed in ENUMS.items():
            if self.get(key) not in allowed:
                raise ConfigException("Illegal value '%s' for '%s' in %s (%s)"
                                      % (self.get(key), key, self.source, ", ".join(allowed)))
        for key in required:
            if self.get(key) is None:
                raise ConfigException("'%s' must be set, in %s or on the command line" % (key, self.source))
        for key in FILES:
            path = self.get(key)
            if path is not None and not isfile(path):
                raise ConfigException("'%s' file '%s' does not exist" % (key, path))
        try:
            self.chi2_config()
            self.outer_config()
            self.robust_config()
        except (TypeError, ValueError) as e:
            raise ConfigException("Invalid numerical setting in %s: %s" % (self.source, e))
        return self

    def chi2_config(self):
        inner = self.data["inner"]
        return Chi2Config(inner["multistarts"], inner["max_iterations"], inner["gtol"],
                          self.data["seed"], self.data["jobs"])

    def outer_config(self):
        outer = self.data["outer"]
        return OuterConfig(outer["n0"], outer["n_max"], outer["n_cand"], outer["nu_cycle"],
                           outer["lambda"], self.data["seed"])

    def robust_config(self, mu=100.0):
        return RobustConfig(mu, self.data["inner"]["multistarts"], self.data["seed"],
                            self.data["robust"]["epsilon"], jobs=self.data["jobs"])

    def to_dict(self):
        return deepcopy(self.data)

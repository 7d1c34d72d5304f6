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
import json
import logging
import platform
from os import makedirs
from os.path import exists, dirname
from collections import OrderedDict
from datetime import datetime, timezone
from multiprocessing import Pool, cpu_count

logger = logging.getLogger(__name__)

#Disables multiprocessing if set to higher number than the host machine CPUs
CPU_COUNT_MIN = 1


class TuneException(Exception):
    pass

class DataException(TuneException):
    pass

class SurrogateException(TuneException):
    pass

class OptimizationException(TuneException):
    pass

class FilterException(TuneException):
    pass

class NotApplicableException(FilterException):
    pass

class EvaluationException(TuneException):
    pass


def mkdir(path):
    if path and not exists(path):
        makedirs(path)


def construct_enum(**enums):
    """ Create your own pseudo-enums """
    return type('Enum', (), enums)


def enum_values(enum):
    """ Values of a pseudo-enum created by construct_enum, in definition order """
    return [v for k, v in vars(enum).items() if not k.startswith('_')]


def json_file_to_dict(fname):
    """ Read a JSON document, preserving the order of keys.
        Syntax errors are reported with the file name, line and column.
    """
    try:
        with open(fname, "rt") as f:
            return json.load(f, object_pairs_hook=OrderedDict)
    except ValueError as e:
        lineno = getattr(e, 'lineno', None)
        if lineno is None:
            raise DataException("Parse error in '%s': %s" % (fname, e))
        raise DataException("Parse error in '%s' at line %d column %d: %s"
                            % (fname, lineno, e.colno, e.msg))
    except IOError as e:
        raise DataException("Can't read '%s': %s" % (fname, e.strerror))


def to_document(obj):
    """ Convert numpy containers and scalars into plain JSON types """
    if isinstance(obj, dict):
        return OrderedDict((str(k), to_document(v)) for k, v in obj.items())
    if isinstance(obj, (list, tuple)):
        return [to_document(v) for v in obj]
    if hasattr(obj, 'tolist'):
        return to_document(obj.tolist())
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


def dict_to_json_file(data, fname):
    """ Write a document deterministically: sorted keys, repr floats.
        Infinite values are written as the strings "inf" and "-inf".
    """
    mkdir(dirname(fname))
    with open(fname, "wt") as f:
        f.write(dumps_document(data))
        f.write("\n")


def dumps_document(data):
    def finite(v):
        if isinstance(v, float) and v in (float('inf'), float('-inf')):
            return "inf" if v > 0 else "-inf"
        if isinstance(v, dict):
            return OrderedDict((k, finite(x)) for k, x in v.items())
        if isinstance(v, list):
            return [finite(x) for x in v]
        return v
    return json.dumps(finite(to_document(data)), indent=4, sort_keys=True)


def write_metadata(fname, command):
    """ Timestamps and host details live next to a document, never inside it """
    dict_to_json_file({
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "python": platform.python_version(),
        "host": platform.node(),
    }, fname + ".meta.json")


def get_jobs_count(jobs):
    return int(jobs if jobs else cpu_count())


def parallel_map(worker, jobs, jobs_count=1):
    """ Run worker(job) for each job and return the results in job order.

        jobs_count: 1 runs sequentially in this process, 0 uses every core.
        The worker must be a module level function so it can be pickled.
    """
    jobs = list(jobs)
    jobs_count = get_jobs_count(jobs_count)
    if jobs_count <= CPU_COUNT_MIN or len(jobs) <= 1:
        return [worker(job) for job in jobs]

    p = Pool(processes=min(jobs_count, len(jobs)))
    try:
        results = [p.apply_async(worker, [job]) for job in jobs]
        return [r.get() for r in results]
    finally:
        p.terminate()
        p.join()

# Ingest cases for reference and MC run documents.
# Every case is either accepted ("expected" holds checks on the result) or
# rejected with an error message containing "exception_msg".

reference_cases = {
    "ok": {
        "desc": "two observables, bins in file order",
        "document": {"observables": [
            {"id": "a", "bins": [{"value": 1.0, "uncertainty": 0.1}, {"value": 2.0, "uncertainty": 0.2}]},
            {"id": "b", "group": "jets", "bins": [{"value": 3.0, "uncertainty": 0.3}]},
        ]},
        "expected": {"ids": ["a", "b"], "total_bins": 3, "values": [1.0, 2.0, 3.0]},
    },
    "zero_uncertainty": {
        "desc": "zero uncertainty is rejected, naming the bin",
        "document": {"observables": [
            {"id": "a", "bins": [{"value": 1.0, "uncertainty": 0.1}, {"value": 2.0, "uncertainty": 0.0}]},
        ]},
        "exception_msg": "Observable 'a', bin 2: uncertainty must be positive",
    },
    "empty": {
        "desc": "no observables",
        "document": {"observables": []},
        "exception_msg": "no observables",
    },
    "duplicate": {
        "desc": "duplicate id is named",
        "document": {"observables": [
            {"id": "a", "bins": [{"value": 1.0, "uncertainty": 0.1}]},
            {"id": "a", "bins": [{"value": 2.0, "uncertainty": 0.1}]},
        ]},
        "exception_msg": "duplicate observable id 'a'",
    },
    "missing_field": {
        "desc": "record without bins",
        "document": {"observables": [{"id": "a"}]},
        "exception_msg": "observable record 1 is malformed",
    },
}

PARAMS = {"names": ["x", "y"], "lower": [0.0, 0.0], "upper": [1.0, 1.0]}


def run(point, a_values, b_values=(5.0,)):
    return {"point": point, "observables": {
        "a": {"values": list(a_values), "uncertainties": [0.01] * len(a_values)},
        "b": {"values": list(b_values)},
    }}


mc_run_cases = {
    "ok": {
        "desc": "three runs, missing uncertainties default to zero",
        "document": {"params": PARAMS, "runs": [run([0.1, 0.2], [1, 2]), run([0.5, 0.5], [3, 4]),
                                                run([0.9, 0.1], [5, 6])]},
        "expected": {"n_runs": 3, "b_uncertainties": [[0.0], [0.0], [0.0]]},
    },
    "single_run": {
        "desc": "one run is accepted",
        "document": {"params": PARAMS, "runs": [run([0.1, 0.2], [1, 2])]},
        "expected": {"n_runs": 1},
    },
    "no_runs": {
        "desc": "no runs",
        "document": {"params": PARAMS, "runs": []},
        "exception_msg": "fewer runs than 1",
    },
    "shape": {
        "desc": "one bin short",
        "document": {"params": PARAMS, "runs": [run([0.1, 0.2], [1])]},
        "exception_msg": "observable 'a' has 1 bins, reference has 2",
    },
    "outside": {
        "desc": "point outside the bounds",
        "document": {"params": PARAMS, "runs": [run([0.1, 1.5], [1, 2])]},
        "exception_msg": "point outside parameter bounds ('y' = 1.5",
    },
}

MC_REFERENCE = {"observables": [
    {"id": "a", "bins": [{"value": 1.0, "uncertainty": 0.1}, {"value": 2.0, "uncertainty": 0.2}]},
    {"id": "b", "bins": [{"value": 3.0, "uncertainty": 0.3}]},
]}

normalize_cases = [
    ({"a": 2.0, "b": 2.0}, {"a": 0.5, "b": 0.5}),
    ({"a": 1.0}, {"a": 1.0}),
    ({"a": 1.0, "b": 3.0}, {"a": 0.25, "b": 0.75}),
]

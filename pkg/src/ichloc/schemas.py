"""JSON Schema descriptions of the files the CLI writes.

They document the output shapes; the package itself never validates
against them (that would pull in a runtime dependency), the test suite does.
"""

_COUNT = {"type": "integer", "minimum": 0}
_PERCENT = {"type": "number", "minimum": 0, "maximum": 100}

DETECTIONS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "detections",
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "slice_id": {"type": "string"},
            "x": _COUNT,
            "y": _COUNT,
            "score": {"type": "number"},
        },
        "required": ["slice_id", "x", "y", "score"],
        "additionalProperties": False,
    },
}

DETECTOR_PARAMS_SCHEMA = {
    "type": "object",
    "properties": {
        "h": {"type": "number", "minimum": 0},
        "T": {"type": "number"},
        "d": {"type": "number", "minimum": 1},
        "footprint_radius": {"type": "integer", "minimum": 1},
    },
    "required": ["h", "T", "d"],
}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "evaluation report",
    "type": "object",
    "properties": {
        "tp": _COUNT,
        "fp": _COUNT,
        "fn": _COUNT,
        "ppv": _PERCENT,
        "se": _PERCENT,
        "dice": _PERCENT,
        # present only in reports written by `ichloc run`
        "params": DETECTOR_PARAMS_SCHEMA,
        "n_slices": _COUNT,
    },
    "required": ["tp", "fp", "fn", "ppv", "se", "dice"],
    "additionalProperties": False,
}

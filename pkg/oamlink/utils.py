"""
oamlink - utils

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from pathlib import PurePath
from typing import Any, Optional

import datetime
import json as jsonlib
import math
import numpy as np


def isoformat(datetime_obj: Optional[datetime.datetime] = None) -> str:
    """Return datetime to ISO 8601 variant suitable for users.
    Assume UTC for datetime objects without a timezone, always use
    the Z timezone designator."""
    if datetime_obj is None:
        datetime_obj = datetime.datetime.utcnow()
    elif datetime_obj.tzinfo:
        datetime_obj = datetime_obj.astimezone(datetime.timezone.utc).replace(tzinfo=None)
    return datetime_obj.isoformat()[:19] + "Z"


def _finite(value: float) -> Optional[float]:
    # JSON has no inf/nan
    return value if math.isfinite(value) else None


def default_json_serialization(obj: Any) -> Any:
    if isinstance(obj, datetime.datetime):
        return isoformat(obj)
    if isinstance(obj, PurePath):
        return str(obj)
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"real": obj.real.tolist(), "imag": obj.imag.tolist()}
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _finite(float(obj))

    raise TypeError("Object of type {!r} is not JSON serializable".format(obj.__class__.__name__))


def json_encode(obj: Any, *, compact: bool = True, sort_keys: bool = True) -> str:
    return jsonlib.dumps(
        obj,
        sort_keys=sort_keys,
        indent=None if compact else 4,
        separators=(",", ":") if compact else None,
        default=default_json_serialization,
    )

"""Small problem configurations shared by the tests."""
import copy
import os

from fracsource.models import RunConfig, parse_config

SLOW = bool(os.environ.get("FRACSOURCE_SLOW"))
SLOW_REASON = "set FRACSOURCE_SLOW=1 to run acceptance-scale tests"

_SMALL = {
    "time": {"alpha": 0.75, "T": 1.0, "N": 20},
    "mesh": {"cells_per_side": 10, "blocks_per_side": 5},
    "ensemble": {"realizations": 50, "seed": 3, "workers": 2, "batch_size": 16},
    "inversion": {"delta": 0.0, "max_iter": 2000},
}


def _merge(base, extra):
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def small_data(directory=None, **sections):
    data = copy.deepcopy(_SMALL)
    if directory is not None:
        data["output"] = {"directory": str(directory)}
    return _merge(data, sections)


def small_config(directory=None, **sections) -> RunConfig:
    """10x10 mesh, 5x5 coarse blocks, N=20, 50 realizations."""
    return parse_config(small_data(directory, **sections))

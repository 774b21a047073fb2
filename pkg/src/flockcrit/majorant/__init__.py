"""Majorant ODE systems and the critical-threshold curves they generate."""
from .curves import *  # noqa: F401,F403
from .curves import __all__ as _curves_all
from .harness import *  # noqa: F401,F403
from .harness import __all__ as _harness_all
from .riccati import *  # noqa: F401,F403
from .riccati import __all__ as _riccati_all

__all__ = _riccati_all + _curves_all + _harness_all

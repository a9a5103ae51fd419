"""Abatement investment under carbon-tax risk and tax uncertainty.

Layers: ``model`` (profit and costs), ``tax`` (Markov tax chains and
benchmarks), ``hjb`` (finite-difference control solver), ``game``
(worst-case tax game), ``simulation`` (Monte Carlo), ``config`` and
``reporting`` (scenarios, tables, figures) and ``cli``.
"""

__version__ = "0.1.0"

from .model import *  # noqa: E402,F401,F403
from .tax import *  # noqa: E402,F401,F403
from .hjb import *  # noqa: E402,F401,F403
from .game import *  # noqa: E402,F401,F403
from .simulation import *  # noqa: E402,F401,F403

# type: ignore
# fmt: off

from .adam import *
from .autodiff import *
from .checks import *
from .concurrency import *
from .config import *
from .domains import *
from .errors import *
from .experiments import *
from .fixture import *
from .metrics import *
from .networks import *
from .objectives import *
from .optimizer import *
from .oracle import *
from .problems import *
from .serialization import *
from .timer import *


__all__ = (
    adam.__all__ +
    autodiff.__all__ +
    checks.__all__ +
    concurrency.__all__ +
    config.__all__ +
    domains.__all__ +
    errors.__all__ +
    experiments.__all__ +
    fixture.__all__ +
    metrics.__all__ +
    networks.__all__ +
    objectives.__all__ +
    optimizer.__all__ +
    oracle.__all__ +
    problems.__all__ +
    serialization.__all__ +
    timer.__all__
)


__title__ = 'bilevel_obstacle'
__author__ = 'The Master'
__license__ = 'MIT'
__copyright__ = 'Copyright 2022-present The Master'
__version__ = '1.0.0'

from typing import Any, Callable, Coroutine, TypeVar

import numpy as np
import numpy.typing as npt


T = TypeVar('T')

Coro = Coroutine[Any, Any, T]
FloatArray = npt.NDArray[np.float64]
FieldFn = Callable[[FloatArray], FloatArray]

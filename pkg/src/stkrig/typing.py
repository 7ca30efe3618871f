"""Collection of stkrig typing."""

from __future__ import annotations

from typing import Dict, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

Shape = Tuple[int, int]

# name -> (rows, cols) of every learnable matrix
ParamShapes = Dict[str, Shape]

RealMatrix = NDArray[np.float64]

BoolVector = NDArray[np.bool_]

MatrixLike = Union[ArrayLike, "DiffMatrix"]  # noqa: F821

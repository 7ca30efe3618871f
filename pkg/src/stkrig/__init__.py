#!/usr/bin/env python3
__version__ = "0.1.0"

from . import (
    asggru,
    autodiff,
    cli,
    data,
    evaluation,
    exceptions,
    graph,
    jstgat,
    model,
    pseudo,
    simulation,
    solvers,
    train,
    validation,
)

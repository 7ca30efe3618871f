"""Synthetic spatiotemporal sensor data for desk-scale experiments."""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import validation
from .base_class import Base
from .data import Dataset
from .exceptions import ConfigError
from .graph import SensorGraph, gaussian_kernel_adjacency, normalize

__all__ = ["SynthParams", "place_sensors", "diffusion_series", "synth_generate"]


def __dir__() -> list[str]:
    return __all__


class SynthParams(Base):
    """
    Parameters of the synthetic diffusion process.

    Parameters
    ----------
    beta :
        Diffusion rate toward the neighborhood average, in ``[0, 1]``.
    period :
        Period of the daily cycle, in steps.
    amplitude :
        Amplitude of the daily cycle.
    noise :
        Standard deviation of the Gaussian innovation.
    """

    def __init__(
        self,
        beta: float = 0.3,
        period: float = 48.0,
        amplitude: float = 1.0,
        noise: float = 0.1,
    ):
        self.beta = beta
        self.period = period
        self.amplitude = amplitude
        self.noise = noise

    @property
    def beta(self) -> float:
        return self._beta

    @beta.setter
    def beta(self, value: float):
        value = validation.check_positive(value, "beta", strict=False)
        if value > 1:
            raise ConfigError(f"beta must lie in [0, 1], {value} provided instead!")
        self._beta = value

    @property
    def period(self) -> float:
        return self._period

    @period.setter
    def period(self, value: float):
        self._period = validation.check_positive(value, "period")

    @property
    def amplitude(self) -> float:
        return self._amplitude

    @amplitude.setter
    def amplitude(self, value: float):
        self._amplitude = validation.check_positive(value, "amplitude", strict=False)

    @property
    def noise(self) -> float:
        return self._noise

    @noise.setter
    def noise(self, value: float):
        self._noise = validation.check_positive(value, "noise", strict=False)


def place_sensors(n_sensors: int, rng: np.random.Generator) -> NDArray:
    """Uniform positions in the unit square, redrawing duplicated coordinates."""
    coords = rng.uniform(size=(n_sensors, 2))
    while True:
        _, first = np.unique(coords, axis=0, return_index=True)
        duplicated = np.setdiff1d(np.arange(n_sensors), first)
        if duplicated.size == 0:
            return coords
        coords[duplicated] = rng.uniform(size=(duplicated.size, 2))


def diffusion_series(
    coords: NDArray,
    adj: NDArray,
    n_steps: int,
    params: SynthParams,
    rng: np.random.Generator,
) -> NDArray:
    """
    Simulate ``x_{t+1} = (1 - beta) x_t + beta A x_t + amplitude sin(2 pi t / period + phi) + noise``.

    The phase of sensor ``i`` is ``pi (x_i + y_i)``, so nearby sensors cycle together,
    and the initial state is ``A z`` for standard normal ``z``.

    Returns
    -------
    :
        ``n_steps x N`` readings.
    """
    n_sensors = coords.shape[0]
    phase = np.pi * coords.sum(axis=1)
    x = adj @ rng.standard_normal(n_sensors)
    series = np.empty((n_steps, n_sensors))
    for t in range(n_steps):
        series[t] = x
        drift = params.amplitude * np.sin(2 * np.pi * t / params.period + phase)
        x = (
            (1 - params.beta) * x
            + params.beta * (adj @ x)
            + drift
            + params.noise * rng.standard_normal(n_sensors)
        )
    return series


def synth_generate(
    n_sensors: int,
    n_steps: int,
    seed: int = 0,
    params: Optional[SynthParams] = None,
) -> Dataset:
    """
    Generate a spatially correlated sensor dataset on random positions.

    Parameters
    ----------
    n_sensors :
        Number of sensors, at least 8.
    n_steps :
        Number of time points.
    seed :
        Seed of every random draw; the same seed gives the same dataset.
    params :
        Process parameters; defaults to :class:`SynthParams`.

    Returns
    -------
    :
        A :class:`~stkrig.data.Dataset` whose metadata hold the generator parameters.

    Examples
    --------
    >>> ds = synth_generate(8, 50, seed=1, params=SynthParams(beta=0, amplitude=0, noise=0))
    >>> bool(np.all(ds.readings == ds.readings[0]))
    True
    """
    n_sensors = validation.check_integer(n_sensors, "n_sensors", minimum=8)
    n_steps = validation.check_integer(n_steps, "n_steps", minimum=1)
    params = SynthParams() if params is None else params
    rng = np.random.default_rng(seed)

    coords = place_sensors(n_sensors, rng)
    graph = SensorGraph.from_coords(coords, node_ids=[f"s{i:03d}" for i in range(n_sensors)])
    adj = normalize(gaussian_kernel_adjacency(graph.dist, graph.sigma, 0.0))
    readings = diffusion_series(coords, adj, n_steps, params, rng)
    return Dataset(
        readings,
        graph,
        frequency="1step",
        category="synthetic",
        metadata={
            "generator": {
                "n_sensors": n_sensors,
                "n_steps": n_steps,
                "seed": int(seed),
                **params.to_dict(),
            }
        },
    )

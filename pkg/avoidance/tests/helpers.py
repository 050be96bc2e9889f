import numpy as np

from avoidance.demonstrations import DemoSet, Demonstration, Label
from avoidance.grid import GridDistribution, GridSpec


def line_demo(y0, y1, n=50, x0=0.05, x1=0.95, noise=0.0, seed=0, label=Label.POSITIVE, weight=1.0):
    """Straight 2D demo from (x0, y0) to (x1, y1) over phase [0, 1]"""
    phases = np.linspace(0.0, 1.0, n)
    rng = np.random.default_rng(seed)
    xs = x0 + (x1 - x0) * phases
    ys = y0 + (y1 - y0) * phases + noise * rng.normal(size=n)
    return Demonstration(samples=np.column_stack([phases, xs, ys]), label=label, weight=weight)


def line_set(*demos):
    return DemoSet(tuple(demos))


def random_grid(spec: GridSpec, rng: np.random.Generator, zeros: float = 0.0) -> GridDistribution:
    values = rng.random(spec.shape) + 1e-3
    if zeros:
        values[rng.random(spec.shape) < zeros] = 0.0
        values.flat[0] = max(values.flat[0], 1e-3)
    return GridDistribution.from_values(spec, values)


def small_spec(phase=3, cells=(4,)):
    return GridSpec.for_task(phase, [(0.0, 1.0)] * len(cells), cells)

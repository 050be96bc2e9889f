"""SVG line charts for result tables and pictures of consensus masks."""
import logging
import os
from typing import Dict, Iterable, List, Optional

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .exceptions import MalformedTable  # noqa: E402
from .geometry import Box  # noqa: E402
from .mask import Mask  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed salt and no timestamp keep the SVG bytes identical across runs.
SVG_RC = {'svg.hashsalt': 'negfeed', 'svg.fonttype': 'none'}
SVG_METADATA = {'Date': None}

CHART_KINDS = {
    'success': {'x': 'cycle', 'y': 'success_rate', 'series': 'variant', 'ylabel': 'Success rate'},
    'timing': {'x': 'cycle', 'y': 'mean_wall_time_s', 'series': 'method', 'ylabel': 'Mean wall time (s)'},
}


def _check_table(df: pd.DataFrame, x: str, y: str, series: str) -> pd.DataFrame:
    missing = [c for c in (x, y, series) if c not in df.columns]
    if missing:
        raise MalformedTable(f"Table is missing columns: {', '.join(missing)}")
    try:
        df = df.assign(**{x: pd.to_numeric(df[x]), y: pd.to_numeric(df[y])})
    except (ValueError, TypeError) as e:
        raise MalformedTable(f"Columns {x}/{y} must be numeric: {e}") from e
    return df


def plot_table(df: pd.DataFrame, path: str, x: str = 'cycle', y: str = 'success_rate',
               series: str = 'variant', title: str = '', ylabel: Optional[str] = None) -> str:
    """One line per series value, in first-appearance order"""
    df = _check_table(df, x, y, series)
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6.5, 4.5))
        names = list(dict.fromkeys(df[series].astype(str)))
        for name in names:
            rows = df[df[series].astype(str) == name].sort_values(x)
            ax.plot(rows[x].to_numpy(), rows[y].to_numpy(), marker='o', label=name, gid=f"series-{name}")
        ax.set_xlabel(x.replace('_', ' ').capitalize())
        ax.set_ylabel(ylabel or y)
        if title:
            ax.set_title(title)
        if names:
            ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata=SVG_METADATA)
        plt.close(fig)
    logger.info(f"Wrote chart {path} ({len(names)} series)")
    return path


def chart_kind(df: pd.DataFrame) -> str:
    return 'timing' if 'mean_wall_time_s' in df.columns and 'method' in df.columns else 'success'


def plot_emit(tables: Dict[str, pd.DataFrame], output_dir: str) -> List[str]:
    """One SVG per table, named after the table"""
    paths = []
    for name in sorted(tables):
        df = tables[name]
        options = CHART_KINDS[chart_kind(df)]
        path = os.path.join(output_dir, f"{name}.svg")
        paths.append(plot_table(df, path, options['x'], options['y'], options['series'],
                                title=name.replace('_', ' '), ylabel=options['ylabel']))
    return paths


def plot_mask(mask: Mask, path: str, obstacles: Iterable[Box] = (),
              polylines: Iterable[np.ndarray] = ()) -> str:
    """Protected cells dark, open cells light; 3D masks are drawn as a top view"""
    bits = mask.bits if mask.spec.ndim == 2 else mask.bits.min(axis=-1)
    (x0, x1), (y0, y1) = mask.spec.bounds[:2]
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(bits.T, origin='lower', extent=(x0, x1, y0, y1), cmap='gray', vmin=0, vmax=1)
        for box in obstacles:
            ax.add_patch(plt.Rectangle(box.minimum[:2], box.maximum[0] - box.minimum[0],
                                       box.maximum[1] - box.minimum[1], color='tab:red', alpha=0.6))
        for line in polylines:
            line = np.asarray(line)
            ax.plot(line[:, 0], line[:, 1], color='tab:blue', linewidth=1)
        ax.set_title(f"Mask, threshold {mask.threshold:g}, {mask.n_demos} demos")
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata=SVG_METADATA)
        plt.close(fig)
    logger.info(f"Wrote mask picture {path}")
    return path

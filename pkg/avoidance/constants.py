"""
Canonical task geometry. Bump GEOMETRY_VERSION whenever a number here changes;
benchmark results are only comparable within one version.

All tasks live in the unit square / unit cube.
"""

GEOMETRY_VERSION = 2

# Simple ambiguous task: one obstacle between a left start and a right goal.
# Both behaviours share a straight lead-in and lead-out along y = 0.5 and only
# split between the fork points. 21 cells put y = 0.5 on a cell centre.
SIMPLE_BOUNDS = ((0.0, 1.0), (0.0, 1.0))
SIMPLE_START = (0.05, 0.5)
SIMPLE_GOAL = (0.95, 0.5)
SIMPLE_OBSTACLE_CENTER = (0.5, 0.5)
SIMPLE_OBSTACLE_SIZE = (0.2, 0.4)
SIMPLE_FORK_X = (0.25, 0.75)
SIMPLE_DETOUR_X = (0.37, 0.63)
SIMPLE_OVER_Y = 0.85
SIMPLE_UNDER_Y = 0.15
SIMPLE_GRID_CELLS = (20, 21, 21)

# Slalom: travel bottom to top through one gap in each of two obstacle rows.
SLALOM_BOUNDS = ((0.0, 1.0), (0.0, 1.0))
SLALOM_START = (0.5, 0.05)
SLALOM_GOAL = (0.5, 0.95)
SLALOM_ROW1_Y = (0.30, 0.38)
SLALOM_ROW2_Y = (0.62, 0.70)
# (gap width, obstacle width) keyed by gap count; gaps and obstacles tile [0, 1]
SLALOM_ROW_LAYOUTS = {
    4: (0.16, 0.12),
    5: (0.12, 0.10),
}
SLALOM_ROW1_GAPS = 5
SLALOM_ROW2_GAPS = 4
SLALOM_APPROACH_Y = 0.22
SLALOM_CROSS_Y = (0.46, 0.54)
SLALOM_EXIT_Y = 0.78
SLALOM_GRID_CELLS = (40, 24, 24)

# Three-behaviour pick and place analogue: a box on the table between start and goal.
# The inflated box contains the midpoint of any two behaviours' detours.
PICKPLACE_BOUNDS = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
PICKPLACE_START = (0.1, 0.5, 0.2)
PICKPLACE_GOAL = (0.9, 0.5, 0.2)
PICKPLACE_BOX_MIN = (0.35, 0.3, 0.0)
PICKPLACE_BOX_MAX = (0.65, 0.7, 0.5)
PICKPLACE_GRIPPER_MARGIN = 0.04
PICKPLACE_DETOUR_X = (0.3, 0.7)
PICKPLACE_LEFT_Y = 0.1
PICKPLACE_RIGHT_Y = 0.9
PICKPLACE_OVER_Z = 0.8
PICKPLACE_GRID_CELLS = (20, 12, 12, 12)

GOAL_TOLERANCE_CELLS = 2

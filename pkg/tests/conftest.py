import pytest

from arterialsim.corridor import build_corridor

# Two-direction corridor with one signal per direction, small enough that
# tests over it run in well under a second.
MINI_CORRIDOR = """
[corridor]
name = mini

[link]
direction = eb
length = 1000
lanes = 3
speed_limit = 20
downstream = mid

[link]
direction = eb
length = 800
lanes = 3
speed_limit = 20
downstream = exit

[link]
direction = wb
length = 800
lanes = 3
speed_limit = 20
downstream = mid

[link]
direction = wb
length = 1000
lanes = 3
speed_limit = 20
downstream = exit

[intersection mid]
cycle = 120
offset = 0
intervals = green:55 yellow:5 red:60
jughandle_diverge = 180
jughandle_length = 150
jughandle_target = mid_cross
left_turn_fraction = 0.05
"""


@pytest.fixture
def mini_text():
    return MINI_CORRIDOR


@pytest.fixture
def mini():
    return build_corridor(MINI_CORRIDOR)

"""Counter-based random streams.

Every draw is addressed by (seed, stream, row, column): stream and seed select
a Philox key, the row selects a disjoint counter block, and the column is the
position inside the block.  Element (row, i) of a stream therefore never
depends on how many columns are drawn, on other streams, or on thread
scheduling, which makes simulations bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
# 2**128 counter values per row: each row can consume far more blocks than
# any simulation will ever request before colliding with the next row.
_ROW_STRIDE = 1 << 128

# Stream ids used by the Monte Carlo engine.
CLOCK = 1
INCREMENTS = 2
EXIT_BRIDGE = 3
CLOCK_POSITION = 4
BARRIER_BRIDGE = 5
MAX_BRIDGE = 6
AY_CROSS = 7


def uniforms(seed: int, stream: int, row: int, n: int) -> np.ndarray:
    """n uniforms in (0, 1) from block `row` of the given stream."""
    key = ((stream & _MASK64) << 64) | (seed & _MASK64)
    bitgen = np.random.Philox(counter=row * _ROW_STRIDE, key=key)
    u = np.random.Generator(bitgen).random(n)
    # random() returns multiples of 2**-53 in [0, 1); shift off exact zero so
    # inverse-CDF transforms stay finite.
    return u + 2.0**-54


def normals(seed: int, stream: int, row: int, n: int) -> np.ndarray:
    """n standard normals via inverse CDF (fixed consumption per draw)."""
    return ndtri(uniforms(seed, stream, row, n))


def exponentials(seed: int, stream: int, row: int, n: int, rate: float) -> np.ndarray:
    """n Exp(rate) variables via inverse CDF."""
    return -np.log(uniforms(seed, stream, row, n)) / rate

"""NumPy implementations of the per-row tree kernels.

These are the fallback used when the compiled extension is unavailable.
Both backends multiply leverages in the same (ascending column) order, so
their outputs are bit-identical.
"""

import numpy as np


def row_cells(x, cols, splits, levs):
    """Cell bitmask and height multiplier of every row for one tree.

    Bit k of the mask is set when row value in column cols[k] exceeds
    splits[k]; values exactly equal to the split fall on the left. The
    multiplier is the product of levs[k] over the set bits.
    """
    right = x[:, cols] > splits
    d = len(cols)
    bits = np.uint32(1) << np.arange(d, dtype=np.uint32)
    masks = (right.astype(np.uint32) * bits).sum(axis=1, dtype=np.uint32)
    mult = np.ones(x.shape[0])
    for k in range(d):
        np.multiply(mult, np.where(right[:, k], levs[k], 1.0), out=mult)
    return masks, mult


def row_mults(x, cols, splits, levs):
    """Height multiplier of every row (mask not needed: prediction path)."""
    right = x[:, cols] > splits
    mult = np.ones(x.shape[0])
    for k in range(len(cols)):
        np.multiply(mult, np.where(right[:, k], levs[k], 1.0), out=mult)
    return mult

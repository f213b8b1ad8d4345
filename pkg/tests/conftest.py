"""Shared random-instance generators for the test suite."""

import numpy as np

from stratovar.elastica import Tensor4


def rand_sym(rng, scale=1.0):
    """Random symmetric 3x3 matrix with entries of order `scale`."""
    m = rng.uniform(-scale, scale, (3, 3))
    return 0.5 * (m + m.T)


def rand_classical(rng, scale=1.0):
    """Random fourth-order tensor with both minor and major symmetries.

    Built by averaging a raw random array over the symmetry group, so the
    symmetries hold exactly in floating point.
    """
    c = rng.uniform(-scale, scale, (3, 3, 3, 3))
    c = 0.5 * (c + c.transpose(1, 0, 2, 3))
    c = 0.5 * (c + c.transpose(0, 1, 3, 2))
    c = 0.5 * (c + c.transpose(2, 3, 0, 1))
    return Tensor4(c, has_minor_sym=True, has_major_sym=True)

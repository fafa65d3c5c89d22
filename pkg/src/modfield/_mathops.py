"""Scalar math that dispatches on the operand type.

Vector fields and network layers are written against these helpers so the
same component code evaluates on floats, numpy arrays, Taylor jets and
autodiff variables.  Any object exposing a ``sin``/``cos``/``tanh`` method
is routed to that method; everything else goes through numpy.
"""

import numpy as np


def sin(x):
    return x.sin() if hasattr(x, "sin") else np.sin(x)


def cos(x):
    return x.cos() if hasattr(x, "cos") else np.cos(x)


def tanh(x):
    return x.tanh() if hasattr(x, "tanh") else np.tanh(x)

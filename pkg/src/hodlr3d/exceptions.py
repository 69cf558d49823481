"""Exception types raised by hodlr3d."""


class DegenerateGeometryError(ValueError):
    """Two distinct particles coincide, or the octree cannot separate them."""


class UnsupportedKernelError(ValueError):
    """The requested operation is not wired for this kernel."""


class NotConvergedWarning(RuntimeWarning):
    """An iterative solve stopped at its iteration cap."""

"""C4 rotation-invariant variational quantum classifiers on an exact statevector simulator."""

__version__ = "0.1.0"

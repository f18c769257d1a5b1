"""Numerical toolkit for the inhomogeneous circular law.

Submodules:
    linalg     dense complex linear-algebra kernels (LAPACK-backed)
    dyson      vector self-consistent equation solver and derivatives
    stability  stability operator L = V^{-1}(1 - TF)V and its spectral data
    density    radial density of states, cumulative mass, jump height
    ensemble   random-matrix sampling, resolvents, local-law statistics
    girko      hermitization pipeline: log-determinants, master formula
    cli        command-line driver
"""

__version__ = "0.1.0"

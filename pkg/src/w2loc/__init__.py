"""Earthquake location with the quadratic Wasserstein misfit.

Modules
-------
signal      traces, Ricker wavelets, square normalization, noise models
w2core      one-dimensional W2 distance and its Frechet gradient
altmetrics  relative L2, shift-normalized W2 and Kantorovich-Rubinstein misfits
wavesim     2D acoustic finite-difference solver with PML and free surface
adjoint     per-receiver sensitivity kernels and the location objective
locate      Levenberg-Marquardt-Fletcher iteration and GN / BFGS baselines
experiments configuration-driven landscape, location, noise and comparison runs
"""

__version__ = "0.1.0"

"""Learned exchange-correlation functionals for 1D Kohn-Sham DFT.

Submodules: ``system`` (grids, kernels, geometries), ``oracle`` (exact
two-electron references), ``qsim`` (statevector and density-matrix circuit
simulator), ``functionals`` (classical and quantum XC models), ``scf``
(differentiable Kohn-Sham loop), ``train`` (loss, optimizers, metrics) and
``harness`` (CLI, presets and verification experiments).
"""

__version__ = "0.1.0"

"""Numerical toolkit for the dissipative KdV family ``u_t + u_xxx + |D|^{2a} u + u u_x = 0``."""

from .bilinear_lab import SweepReport, s_alpha, sharpness_sweep
from .bourgain import LemmaKind, LemmaVerdict, lemma_check
from .evolution import PicardConfig, Trajectory, picard_solve, solve_ivp
from .spectral_core import Field, Grid1D, ModelParams, SpectralField, make_grid

__all__ = [
    "Field", "Grid1D", "LemmaKind", "LemmaVerdict", "ModelParams", "PicardConfig",
    "SpectralField", "SweepReport", "Trajectory", "lemma_check", "make_grid", "picard_solve",
    "s_alpha", "sharpness_sweep", "solve_ivp",
]

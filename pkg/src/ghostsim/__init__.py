"""Wave-optics simulation of lensless ghost imaging.

Pseudothermal (Gaussian-Schell) and SLM sources, Fresnel propagation,
semiclassical detection, correlation imaging with physical or computed
reference arms, and depth sectioning from precomputed reference stacks.
"""
from .correlator import (GhostImage, ScenarioConfig, compute_reference, correlate,
                         predicted_image, run_computational, run_pseudothermal, run_slm,
                         simulate_bucket)
from .grid import ComplexField, GridSpec, RealField, make_grid
from .propagation import direct_oracle, fresnel_propagate
from .sectioning import ReferenceStack, build_stack, depth_profile, psf_width, section
from .source import GaussianSchellParams, ModulationScheme, SlmParams, sinusoidal_scheme

__version__ = "0.1.0"

__all__ = [
    "ComplexField", "GaussianSchellParams", "GhostImage", "GridSpec", "ModulationScheme",
    "RealField", "ReferenceStack", "ScenarioConfig", "SlmParams", "build_stack",
    "compute_reference", "correlate", "depth_profile", "direct_oracle", "fresnel_propagate",
    "make_grid", "predicted_image", "psf_width", "run_computational", "run_pseudothermal",
    "run_slm", "section", "simulate_bucket", "sinusoidal_scheme",
]

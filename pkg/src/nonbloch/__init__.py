"""Non-Bloch supercell band structures for non-Hermitian tight-binding models.

The package computes mu-parameterized complex band structures from supercells
with twisted boundary conditions, diagnoses point gaps through eigenenergy
winding numbers and the spectral potential, assembles generalized Brillouin
zones by quasi-Newton minimization over mu, and cross-validates everything
against direct open-boundary diagonalization and synthesized Green's
functions.
"""

from .model import (LaurentModel, MomentumPoint, builtin_1d, builtin_2d,
                    dump_model_json, eval_bloch, eval_bloch_grid,
                    gauge_transform, get_model, load_model_json, reduce_angle)
from .supercell import (Mode, SpectralSample, SupercellSpec, build_supercell,
                        default_twist_grid, diagonalize, sweep_bz, unfold)
from .diagnostics import (NBF, OnSpectrumError, WindingQuery, find_nbfs,
                          nbf_density, nbf_density_from_potential,
                          potential_gradient, potential_gradient_fd,
                          self_intersections, spectral_potential,
                          spectral_potential_samples, winding, winding_loop,
                          winding_map)
from .gbz import (GBZPoint, MuSearchResult, Verdict, candidate_energy_grid,
                  classify_energy, minimize_potential, predict_obc_spectrum,
                  saddle_points)
from .obc import (FiniteLattice, FLTField, GreensMatrix, build_finite,
                  chain_sites, diagonalize_obc, dos, extract_from_greens, flt,
                  greens, hotspot, parallelogram_sites, rect_sites,
                  skin_profile)

__version__ = "0.1.0"

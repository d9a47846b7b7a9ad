"""cyclekit: find, stabilize, and verify unstable cycles of discrete maps."""

__version__ = "0.1.0"

from .coeffs import (MixingCoefficients, MixingParams, build_coefficients,
                     feedback_weights, mixing_weights, nyquist_gain,
                     nyquist_gain_closed_form)
from .control import (CycleRecord, DetectionSettings, LoopHistory,
                      detect_cycles, detect_cycles_sweep, newton_refine,
                      run_until_periodic, verify_cycle)
from .maps import MapSystem, builtin, cycle_multipliers, iterate, list_builtin
from .numerics import (ComplexPoly, RealPoly, count_zeros_in_disk, poly_eval,
                       poly_mul, poly_roots)
from .stability import (BoundaryCurve, StabilityReport, TransferFunction,
                        boundary_curve, characteristic_poly,
                        multiplier_admissible, multiplier_bounds,
                        real_crossing_min, real_part_min, region_area,
                        region_length, schur_stable, spectral_radius_raster,
                        stability_report)

__all__ = [name for name in dir() if not name.startswith("_")]

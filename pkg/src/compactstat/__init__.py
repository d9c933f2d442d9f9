"""Geostatistical analysis of compaction-roller measurements.

Detrending, directional semivariograms, Cressie-weighted spherical fits,
random-field simulation and sequential spatial backfitting of two driving
passes over one site.
"""

__version__ = "0.1.0"

from .geodata import (  # noqa: E402
    AnisotropyTransform, Dataset, DrivingDirection, Lattice, MappingOperator, RMVRecord,
    apply_anisotropy, build_mapping, center_scale, load_dataset, write_dataset,
)
from .detrend import fit_loess, fit_polynomial, polynomial_design  # noqa: E402
from .variogram import (  # noqa: E402
    Direction, EmpiricalSemivariogram, VariogramConfig, empirical_semivariogram, subsample,
)
from .varmodel import (  # noqa: E402
    FitResult, SphericalParams, fit_cressie_wls, spherical_cov, spherical_semivariogram,
)
from .simfield import (  # noqa: E402
    FieldSpec, TestBedSpec, generate_testbed, semivariogram_band, simulate_grf,
)
from .backfit import BackfitResult, BackfitSpec, estimate_alpha, run_backfit  # noqa: E402

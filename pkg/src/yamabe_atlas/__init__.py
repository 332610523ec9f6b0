"""Finite-difference Yamabe flow on uniformly regular manifolds given by chart atlases.

The thread count of the numerical backends can be fixed with the
``YAMABE_ATLAS_THREADS`` environment variable; it must be set before the
package (and numpy) is first imported.
"""

import os as _os

_threads = _os.environ.get("YAMABE_ATLAS_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .atlas import (Atlas, Chart, TransitionMap, LocalizationSystem,  # noqa: E402
                    build_sphere_atlas, build_torus_atlas, validate_uniform_regularity)
from .fields import (ChartField, blend, coretract, retract, holder_norm,  # noqa: E402
                     holder_norm_breve, little_holder_modulus, power_map, power_map_series,
                     read_snapshot, write_snapshot)
from .geometry import (MetricField, christoffel, scalar_curvature, covariant_derivative,  # noqa: E402
                       integrate, volume)
from .operators import (GlobalOperator, LocalOperator, conformal_constant,  # noqa: E402
                        conformal_laplacian, laplace_beltrami, ellipticity_check,
                        resolvent_probe, check_transition_compatibility, principal_symbol)
from .flow import (FlowConfig, FlowProblem, FlowTrace, conformal_scalar_curvature,  # noqa: E402
                   normalized_rhs, yamabe_rhs, run, step)
from .diffeo import (FunctionTrace, SampledTrace, build_family, pullback_space,  # noqa: E402
                     pullback_spacetime, smoothness_probe, theta, theta_inverse)

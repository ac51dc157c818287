"""Wald tests for varying coefficients in spatial regression models."""

from .basis import BasisMatrix, BasisSpec, build_psi, eval_lambda_basis, eval_regression_basis
from .design import (DesignBundle, Selector, build_instruments, build_np_design,
                     build_sar_design, build_vc_design, selector)
from .dgp import (Dataset, DgpConfig, build_g_dgp, clt_probe, draw_errors, generate,
                  make_lambda, perturb_distances, sar_error_filter, solve_sar, synth_distances)
from .errors import ConfigError, DataError, NumericalError, VcwaldError
from .estimator import TslsFit, projector_apply, tsls
from .shac import (DistanceSet, KernelSpec, ShacEstimate, ell_from_eta, kernel_eval,
                   nn_bandwidth, shac_xi)
from .wald import (TestSpec, WaldReport, dmat_plain, dmat_shac, estimate_curve, p_values,
                   run_test, wald_statistic)
from .weights import (SpatialWeights, bounded_norms, build_circulant, build_group,
                      build_inverse_distance, row_normalize, spectral_norm)

__version__ = "0.1.0"

"""Data-parallel majorization-minimization solvers.

A generic monotone fixed-point driver plus three worked solvers built on
deterministic tree-summation kernels: nonnegative matrix factorization
(Frobenius and Poisson losses), penalized PET image reconstruction, and
stress-based multidimensional scaling.
"""

from .driver import MmConfig, MmProblem, MmTrace, relative_change, run_mm
from .errors import (DomainError, InputError, MatrixFormatError, MmkitError,
                     MonotonicityError, NonFiniteError, NumericsError,
                     ShapeError)
from .kernels import Backend, elementwise, matmul, matvec, tree_reduce_sum
from .mds import (MdsProblem, anchor_configuration, mds_run, mds_update,
                  stress, stress_gradient, votes_to_dissimilarity)
from .nnmf import (FactorPair, NnmfProblem, cbcl_preprocess, nnmf_objective,
                   nnmf_poisson_objective, nnmf_poisson_run,
                   nnmf_poisson_update, nnmf_run, nnmf_update_v,
                   nnmf_update_w)
from .pet import (PetGeometry, PetProblem, build_neighborhoods,
                  build_system_matrix, default_phantom, pet_loglik,
                  pet_penalized_objective, pet_run, pet_update,
                  simulate_counts)
from .rosenbrock import (RosenbrockProblem, rosenbrock_mm_step,
                         rosenbrock_objective)

__version__ = "0.1.0"

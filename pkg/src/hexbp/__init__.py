"""Matrix-free tensor-product finite element operators and bake-off benchmarks."""
import numba

# the bundled TBB is too old; pick a working layer without probing it first
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .basis import QuadKind, QuadRule1D, TensorBasis, build_basis, gl_rule, gll_rule  # noqa: E402
from .geometry import (  # noqa: E402
    DegenerateElementError,
    GeomFactors,
    compute_jacobians,
    diffusion_factors,
    mass_factors,
)
from .mesh import (  # noqa: E402
    ElementRestriction,
    HexMesh,
    build_box_mesh,
    build_restriction,
    gather,
    read_mesh,
    scatter_add,
    write_mesh,
)
from .operators import (  # noqa: E402
    Backend,
    BPKind,
    CostModel,
    OperatorHandle,
    assemble_oracle,
    build_operator,
    cost_model,
    count_flops,
)
from .solver import BCSet, CGReport, cg, constrain, jacobi_diagonal  # noqa: E402
from .tensor import contract_dim, elem_grad  # noqa: E402

__version__ = "0.1.0"

"""Training toolkit for density-operator latent variable models.

Exact EM over density operators (projection E-step via the recovery map
for the partial trace, closed-form-gradient M-step) for small
transverse-field machines, and contrastive-divergence training of
quantum-interleaved deep Boltzmann machines at dataset scale.
"""

from .engine import (
    BlockDoem,
    DoemConfig,
    DoemResult,
    TrainTrace,
    e_step,
    empirical_probs,
    m_step,
    m_step_gradient,
    qelbo,
    run_doem,
)
from .errors import (
    ConditionSError,
    DoemError,
    IdxFormatError,
    NumericError,
    ValidationError,
)
from .linalg import (
    DensityOperator,
    SpectralDecomposition,
    direct_sum,
    herm_eig,
    kron,
    mat_exp,
    mat_fn_hermitian,
    mat_log,
    partial_trace,
    trace_product,
)
from .models import (
    CqlvmModel,
    ParamHamiltonian,
    QbmSpec,
    build_qbm_hamiltonian,
    cqlvm_blocks,
    gibbs_state,
    log_likelihood,
    model_marginal,
    pauli_term,
)
from .qinfo import (
    ConditionSCertificate,
    check_condition_s,
    check_ruskai,
    petz_recovery,
    qip_project,
    relative_entropy,
    von_neumann_entropy,
)

__version__ = "0.1.0"

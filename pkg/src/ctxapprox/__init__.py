"""ctxapprox: constructive in-context approximation for single-layer attention.

Builds demonstration contexts, from unrestricted token spaces and from
finite vocabularies plus positional encodings, whose fixed-weight attention
readout approximates arbitrary continuous functions, and provides the
exponential-sum zero-counting oracles showing that finite vocabularies without
positional encoding cannot.
"""

__version__ = "0.1.0"

from .construction import (Caps, ConstructionReport, FitOptions, StageBudgets,
                           build_exp_fd_network, construct_context,
                           construct_context_multi_output,
                           construct_relu_rescaled, fit_polynomial,
                           scan_valid_position)
from .embedding import (EmbeddingResult, embed_fnn, embed_softmax_fnn,
                        exp_to_softmax_fnn, extract_fnn, readout_batch)
from .errors import (BudgetError, ConfigError, CtxApproxError, DimensionError,
                     EmptyGridError, EpsilonRangeError, IllConditionedError,
                     KroneckerCapExceeded, PositionScanExhausted)
from .expressions import parse_target
from .fnn import (EXP, RELU, SOFTMAX, Activation, FitResult, FnnParams,
                  custom_activation, fit_fnn, fnn_forward, fnn_forward_batch,
                  perturbation_delta, perturbation_gap)
from .grids import Grid
from .kronecker import (KroneckerWitness, TokenDecomposition,
                        coefficient_decompose, kronecker_search,
                        pell_denominators)
from .nonuap import (ExpSum, FiniteFamilySpec, NonUapAuditRecord, count_zeros,
                     hard_target, nonuap_audit, regroup_terms)
from .transformer import (GeneralBlocks, InputAssembly, TransformerParams,
                          assemble, attention_forward, identity_sparse_params,
                          random_sparse_params, simplified_readout,
                          softmax_columns, transformer_readout)
from .vocab_pe import (Box, DensityProfile, PeScheme, SToken, Vocabulary,
                       calkin_wilf_lattice, calkin_wilf_rational,
                       custom_scheme, density_audit, dyadic_lattice, fusc,
                       irrational_rotation, pe_block, pe_value, pe_y_value,
                       standard_y_tokens)

__all__ = [name for name in dir() if not name.startswith("_")]

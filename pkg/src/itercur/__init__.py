"""CUR factorizations from iteratively recomputed singular vectors."""

from .adaptive import (
    AdaptiveConfig,
    RoundTrace,
    cadp_cur,
    cadp_cx,
    cadp_cx_lvg,
    dadp_cur,
    dadp_cx,
    dadp_cx_large,
    one_round_cur,
    volume_cur,
)
from .cur import (
    CurDiagnostics,
    CurFactorization,
    ErrorEstimate,
    build_cur,
    frobenius_error,
    middle_matrix,
    spectral_error,
    theorem_bound,
)
from .exceptions import (
    ConvergenceError,
    DimensionError,
    ItercurError,
    MatrixMarketError,
    RankDeficiencyError,
    SingularSelectionError,
    SizeCapError,
)
from .matcore import (
    LinearOperator,
    aslinearoperator,
    make_rng,
    normalize_rows,
    read_matrix_market,
    synth_sparse,
    write_matrix_market,
)
from .selection import deim, leverage_scores, maxvol, qdeim, sample_distribution, volume_sampling
from .svd import SvdConfig, SvdResult, dense_svd, spectral_norm, svds

__version__ = "0.1.0"

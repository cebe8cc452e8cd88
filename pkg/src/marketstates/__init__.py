"""Market states from clustering standard and reduced-rank correlation matrices."""

from .analysis import (
    adjusted_rand_index,
    build_timeline,
    demeaned_state_analysis,
    rand_index,
    subset_robustness,
    turning_points,
    typical_states,
)
from .clustering import (
    ClusterSolution,
    MatrixSet,
    bisecting_kmeans,
    distance,
    k_selection,
    kmeans,
    pca_project,
)
from .errors import ConfigError, DataError, MarketStatesError, NumericalError, ParseError
from .ingest import PriceSchema, PriceTable, ReturnMatrix, load_prices, load_sectors, log_returns, sector_sort
from .matrix_core import (
    CorrelationMatrix,
    covariance,
    demean_matrix,
    epoch_matrices,
    mean_correlation,
    normalize,
    pearson,
    reduce_corr,
    reduce_cov,
    slice_epochs,
    sliding_mean_correlation,
    svd,
)

__version__ = "0.1.0"

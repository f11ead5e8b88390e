"""Anomaly ranking by empirical excess-mass maximisation on hypercube partitions."""
from .hypergrid import (
    BoxPartition,
    DataError,
    GridSpec,
    SparseHistogram,
    cell_of,
    density_ratio,
    ingest,
)
from .em_fit import (
    NestedClusterModel,
    ThresholdSchedule,
    choose_t1,
    depth_to_floor,
    fit,
    geometric_schedule,
    max_excess_cluster,
    rank,
    score,
    score_points,
)
from .curves import (
    CurveSamples,
    bias_l1,
    em_star_class,
    empirical_em_curve,
    empirical_mv_curve,
    empirical_rademacher,
    mc_volume,
    min_volume_set,
    model_em_curve,
    oracle_em_star,
    penalty,
    project_density,
)
from .synth import HeavyTail2D, PiecewiseConstantDensity, sample_heavy_tail, sample_piecewise, toy_fixture

__version__ = "0.1.0"

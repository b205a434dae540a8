"""
Package initialization
"""
from src.cli_io import LoadedData, load_csv, load_run_config, run, simulate, write_series_csv
from src.core_model import effective_reproduction, link_backward, link_forward, poisson_means
from src.data_processor import DataProcessor, DataValidator
from src.errors import ConfigError, DataError, DomainError, NumericalError, TvpSirdError
from src.factor_model import factor_filter_path
from src.forecasting import dm_test, evaluation_table, recursive_backtest, simulate_forecast
from src.fp_sird import conjugate_posteriors, fit_rolling, gibbs_fixed
from src.inference import build_target, mle_init, rwmh_within_gibbs
from src.mixed_frequency import mf_filter_path
from src.schema import (
    CompartmentSeries, McmcConfig, ModelVariant, Panel,
    PosteriorDraws, RateTriple, RunConfig, SimSpec, StaticParams
)
from src.score_dynamics import filter_path, propagate

__all__ = [
    'LoadedData',
    'load_csv',
    'load_run_config',
    'run',
    'simulate',
    'write_series_csv',
    'effective_reproduction',
    'link_backward',
    'link_forward',
    'poisson_means',
    'DataProcessor',
    'DataValidator',
    'ConfigError',
    'DataError',
    'DomainError',
    'NumericalError',
    'TvpSirdError',
    'factor_filter_path',
    'dm_test',
    'evaluation_table',
    'recursive_backtest',
    'simulate_forecast',
    'conjugate_posteriors',
    'fit_rolling',
    'gibbs_fixed',
    'build_target',
    'mle_init',
    'rwmh_within_gibbs',
    'mf_filter_path',
    'CompartmentSeries',
    'McmcConfig',
    'ModelVariant',
    'Panel',
    'PosteriorDraws',
    'RateTriple',
    'RunConfig',
    'SimSpec',
    'StaticParams',
    'filter_path',
    'propagate'
]

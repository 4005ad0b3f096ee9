"""Time-varying beta estimation: rolling OLS/WLS baselines and interpretable neural estimators."""

from ._core import (
    ConfigError,
    ContractError,
    DataError,
    IoError,
    Model,
    NeuralBetaError,
    NonFiniteError,
    SeriesSample,
    ShapeError,
    SingularSystemError,
    UnsupportedError,
    WindowBatch,
    baseline_report,
    bayes_posterior_mean,
    estimate_ols,
    estimate_wls,
    exponential_weights,
    generate,
    improvement_vs_ols,
    ingest_csv,
    make_windows,
    regularized_wls,
    rmse_beta,
    rmse_y,
    rolling_ols,
    rolling_wls,
    sha256_hex,
    trailing_std,
    train,
    tune_half_life,
    weight_profile,
    write_panel_csv,
)

__version__ = "0.1.0"

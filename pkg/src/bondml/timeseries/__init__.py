"""Time-series diagnostics, unit-root and cointegration tests, ARMA(1,1) fitting,
and the bond-type forecast feature."""

from bondml.timeseries.arma import ArmaParams, fit_arma11, forecast_arma11
from bondml.timeseries.diagnostics import acf, pacf
from bondml.timeseries.hybrid import GroupArmaTable, GroupEntry, augment_with_ts_feature, build_group_arma_table
from bondml.timeseries.unit_root import AdfResult, EgTestResult, adf_test, engle_granger

__all__ = [
    "AdfResult", "ArmaParams", "EgTestResult", "GroupArmaTable", "GroupEntry", "acf", "adf_test",
    "augment_with_ts_feature", "build_group_arma_table", "engle_granger", "fit_arma11", "forecast_arma11", "pacf",
]

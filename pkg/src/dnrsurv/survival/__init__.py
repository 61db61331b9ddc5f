"""Cox regression, forward selection and survival evaluation statistics."""

from .cox import CoxFit, breslow_baseline, breslow_loglik, efron_loglik, fit_cox, predict_survival
from .hazard import HrRow, hazard_ratio_ci, univariate_hr_table, wald_p
from .metrics import (BrierScore, KmCurve, LogRank, brier_score, c_index, kaplan_meier, log_rank,
                      significance_marker)
from .selection import (SelectionStep, SelectionTrace, chi2_critical, forward_select, loocv_linear_predictors,
                        lr_statistic)

__all__ = [
    "CoxFit", "breslow_baseline", "breslow_loglik", "efron_loglik", "fit_cox", "predict_survival",
    "HrRow", "hazard_ratio_ci", "univariate_hr_table", "wald_p",
    "BrierScore", "KmCurve", "LogRank", "brier_score", "c_index", "kaplan_meier", "log_rank",
    "significance_marker",
    "SelectionStep", "SelectionTrace", "chi2_critical", "forward_select", "loocv_linear_predictors",
    "lr_statistic",
]

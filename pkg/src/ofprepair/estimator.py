"""scikit-learn style wrapper around classify + repair.

``fit`` looks at a batch of inputs, picks the row with the worst atomic
condition, classifies it and (if repairable) builds a patch. ``predict``
evaluates the patched function where the patch is valid and the original
elsewhere. There is no learning involved; the estimator shape only gives the
pipeline the usual fit/predict/get_params surface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .detect import THETA_ATOMIC, THETA_FUNC, Label, classify, max_atomic_condition
from .expr import FunctionDef, evaluate, parse
from .repair import PatchDomainError, RepairError, eval_patch, plan_repair


class OFPRepair(BaseEstimator):
    """Repair one DSL function around the worst input of the training batch.

    Parameters
    ----------
    source : str or FunctionDef
        Function to repair, e.g. ``"func f(x in [0, 1]) = (exp(x) - 1) / x"``.
    radius : float
        Validity radius of the Taylor patch.
    theta_atomic, theta_func : float
        Classification thresholds.
    centers : dict or None
        Optional expansion centers, parameter name -> value.

    Attributes
    ----------
    function_ : FunctionDef
    point_ : tuple of float
        Row of ``X`` with the largest atomic condition.
    classification_ : Classification
    patch_ : TaylorPatch or None
        ``None`` when the point is not repairable or no patch was found.
    repair_error_ : RepairError or None
    """

    def __init__(self, source=None, radius=0.01, theta_atomic=THETA_ATOMIC, theta_func=THETA_FUNC, centers=None):
        self.source = source
        self.radius = radius
        self.theta_atomic = theta_atomic
        self.theta_func = theta_func
        self.centers = centers

    def _function(self) -> FunctionDef:
        if isinstance(self.source, FunctionDef):
            return self.source
        if not isinstance(self.source, str):
            raise ValueError("source must be DSL text or a FunctionDef")
        return parse(self.source)

    def fit(self, X, y=None):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        f = self._function()
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != f.arity:
            raise ValueError(f"X has {X.shape[1]} features but {f.name} takes {f.arity}")
        scores = [max_atomic_condition(f, tuple(row))[0] for row in X]
        # nan scores cannot win; ties keep the first row
        k = int(np.argmax(np.nan_to_num(np.asarray(scores), nan=-1.0)))
        point = tuple(float(v) for v in X[k])

        self.function_ = f
        self.n_features_in_ = f.arity
        self.point_ = point
        self.classification_ = classify(f, point, self.theta_atomic, self.theta_func)
        self.patch_ = None
        self.repair_error_ = None
        if self.classification_.label is Label.ORIGINAL_PRECISION_REPAIRABLE:
            centers = {f.param_names.index(n): v for n, v in (self.centers or {}).items()}
            try:
                self.patch_ = plan_repair(f, point, self.radius, centers, self.theta_atomic)
            except RepairError as exc:
                self.repair_error_ = exc
        return self

    def predict(self, X):
        check_is_fitted(self, "function_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            p = tuple(float(v) for v in row)
            if self.patch_ is not None:
                try:
                    out[i] = eval_patch(self.patch_, p)
                    continue
                except PatchDomainError:
                    pass
            out[i] = evaluate(self.function_, p)
        return out

    @property
    def label_(self) -> Label:
        check_is_fitted(self, "classification_")
        return self.classification_.label

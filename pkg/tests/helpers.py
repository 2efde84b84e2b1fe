import numpy as np
from scipy.optimize import minimize

from atmodel.core import ParamVector
from atmodel.likelihood import loss_and_grad


def exact_mle(spec, rows, start=None):
    """Full-batch BFGS on the same loss; used where a test needs the MLE itself."""
    u0 = np.zeros(spec.n_params) if start is None else start.to_flat()
    res = minimize(lambda u: loss_and_grad(u, rows, spec), u0, jac=True, method="BFGS",
                   options={"gtol": 1e-9, "maxiter": 5000})
    return ParamVector.from_flat(res.x, spec)

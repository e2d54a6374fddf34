"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from romda.errors import ContractError
from romda.numerics.autodiff import Graph


def _evaluate(f, params, record):
    g = Graph(record=record)
    nodes = {name: g.param(name, value) for name, value in params.items()}
    loss = f(g, nodes)
    if loss.value.size != 1:
        raise ContractError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    return g, loss


def grad_check(f, params: dict, step: float = 1e-6) -> float:
    """Max over entries of ``|g_autodiff - g_fd| / max(1, |g_fd|)``.

    ``f(graph, nodes)`` must build a scalar loss from the parameter nodes and be
    deterministic; any randomness has to be frozen by the caller.
    """
    if not step > 0:
        raise ContractError(f"grad_check: step must be positive, got {step}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if not params:
        return 0.0
    g, loss = _evaluate(f, params, record=True)
    grads = g.backward(loss)
    _, again = _evaluate(f, params, record=False)
    if float(again.value) != float(loss.value):
        raise ContractError("grad_check: f is not deterministic (two evaluations differ)")

    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(_evaluate(f, params, record=False)[1].value)
            flat[i] = orig - step
            fm = float(_evaluate(f, params, record=False)[1].value)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(fd)))
    return worst

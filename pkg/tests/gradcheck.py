"""Central finite-difference gradient checking used across the test suite."""
from __future__ import annotations

import numpy as np


def numeric_grads(f, arrays: dict[str, np.ndarray], h: float = 1e-6) -> dict:
    """Central differences of the scalar ``f()`` w.r.t. every array entry.

    Perturbs in place and restores, so ``f`` must read the same array
    objects.
    """
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        for ix in np.ndindex(arr.shape):
            orig = arr[ix]
            arr[ix] = orig + h
            fp = f()
            arr[ix] = orig - h
            fm = f()
            arr[ix] = orig
            g[ix] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                atol: float = 1e-7) -> float:
    """Worst relative disagreement, ignoring differences below ``atol``
    (finite differences carry ~1e-9 absolute noise around true zeros)."""
    diff = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-12)
    rel = np.where(diff < atol, 0.0, diff / den)
    return float(rel.max()) if rel.size else 0.0


def check_module_grads(module, x: np.ndarray, rng: np.random.Generator,
                       tol: float = 1e-5, forward=None) -> None:
    """Assert analytic grads of sum(out * W) match finite differences.

    Checks every parameter of ``module`` and the input gradient. The
    module's forward must be deterministic (run with train=False).
    """
    fwd = forward if forward is not None else module.forward
    probe = rng.normal(size=fwd(x).shape)

    def loss() -> float:
        return float((fwd(x) * probe).sum())

    module.zero_grads()
    out = fwd(x)
    dx = module.backward(probe)
    analytic = {k: v.copy() for k, v in module.named_grads().items()}
    analytic["__input__"] = dx
    arrays = dict(module.named_parameters())
    arrays["__input__"] = x
    numeric = numeric_grads(loss, arrays)
    for name in arrays:
        err = max_rel_err(analytic[name], numeric[name])
        assert err < tol, f"{name}: rel err {err:.2e}"
    assert out.shape == probe.shape

"""Shared test oracles: central finite differences and gradient checks."""

import numpy as np

from v2vstyle import tensor as T


def fd_gradient(f, arrays, wrt, h=1e-5, coords=None):
    """Central finite-difference gradient of scalar f(arrays) w.r.t. arrays[wrt].

    ``coords`` optionally restricts the check to a list of flat indices.
    Arrays are perturbed in place and restored; everything runs in f64.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[wrt]
    flat = target.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    grad = np.zeros(len(list(idxs)) if coords is not None else flat.size)
    idxs = range(flat.size) if coords is None else coords
    for j, i in enumerate(idxs):
        orig = flat[i]
        flat[i] = orig + h
        up = f(*base)
        flat[i] = orig - h
        down = f(*base)
        flat[i] = orig
        grad[j] = (up - down) / (2 * h)
    return grad


def rel_err(analytic, numeric):
    """max_i |a_i - n_i| / max(|n_i|, 1)."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.abs(numeric), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_op_grad(op, arrays, scalarize=None, h=1e-5, tol=1e-5, attrs=None):
    """Gradient-check ``op`` against central differences for every input.

    ``scalarize`` reduces the op output to a scalar (defaults to a fixed
    weighted sum so the incoming gradient is non-uniform).
    Returns the worst relative error across inputs.
    """
    attrs = attrs or {}
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    weights = None

    def run(*arrs):
        nonlocal weights
        ts = [T.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrs]
        out = op(*ts, **attrs)
        if scalarize is not None:
            return ts, scalarize(out)
        if weights is None:
            rng = np.random.default_rng(7)
            weights = rng.normal(size=out.shape)
        return ts, (out * T.Tensor(weights, dtype=np.float64)).sum()

    ts, loss = run(*arrays)
    loss.backward()
    analytic = [t.grad for t in ts]

    worst = 0.0
    for i in range(len(arrays)):
        def scalar_f(*arrs):
            _, s = run(*arrs)
            return s.item()

        numeric = fd_gradient(scalar_f, arrays, i, h=h)
        worst = max(worst, rel_err(analytic[i], numeric))
    assert worst < tol, f"gradient mismatch for {getattr(op, '__name__', op)}: rel err {worst:.3e}"
    return worst


def check_param_grads(build_loss, params, h=1e-5, tol=1e-4, max_coords=24, seed=0):
    """FD-check d(loss)/d(param) for a list of Parameters on sampled coordinates.

    ``build_loss`` is a zero-argument callable returning a scalar Tensor; the
    graph is rebuilt per evaluation so parameter perturbations take effect.
    """
    loss = build_loss()
    loss.backward()
    analytic = {id(p): (None if p.grad is None else p.grad.copy()) for p in params}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        a = analytic[id(p)]
        assert a is not None, f"no gradient reached parameter {p.name!r}"
        flat = p.data.reshape(-1)
        n = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = abs(a.reshape(-1)[i] - numeric) / max(abs(numeric), 1.0)
            worst = max(worst, err)
        T.zero_grads([p])
    assert worst < tol, f"parameter gradient mismatch: rel err {worst:.3e}"
    return worst

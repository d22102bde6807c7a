"""Central finite-difference oracle for the autodiff engine."""

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, arrays, step=1e-4):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every array.

    ``fn`` receives plain numpy arrays and must return a float; it never sees
    a :class:`Tensor`, so the oracle is independent of the recorded graph.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn(*arrays)
            flat[i] = orig - step
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    backward(out)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(a, b, floor=1e-6):
    """Max elementwise relative error, measured against the larger magnitude.

    Entries where both gradients are below ``floor`` are compared in absolute
    terms so exact zeros do not blow up the ratio.
    """
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def _straddles_kink(fn, arrays, which, index, g, step, tol):
    """True when the adjoint matches a one-sided difference at this entry.

    A central difference whose two probes lie on different sides of a ReLU
    (or clip) corner mixes two slopes; either one-sided difference still
    agrees with the adjoint, which is the exact derivative at the point.
    """
    flat = arrays[which].reshape(-1)
    orig = flat[index]
    base = fn(*arrays)
    flat[index] = orig + step
    hi = fn(*arrays)
    flat[index] = orig - step
    lo = fn(*arrays)
    flat[index] = orig
    return min(relative_error(g, (hi - base) / step), relative_error(g, (base - lo) / step)) < 10 * tol


def check_gradients(build, arrays, step=1e-4, kinks=False, tol=1e-3):
    """Return the worst relative error between adjoints and finite differences.

    ``build`` maps Tensors to a scalar Tensor; it is re-run on raw arrays
    (wrapped without ``requires_grad``) for the numerical side.

    With ``kinks=True`` entries above ``tol`` whose central difference
    straddles a non-differentiable corner are set aside; the return value is
    then ``(worst error over the remaining entries, number set aside)``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def scalar(*raw):
        return float(build(*[Tensor(r) for r in raw]).data)

    numeric = numerical_grad(scalar, arrays, step)
    analytic = analytic_grad(build, arrays)
    if not kinks:
        return max(relative_error(x, y) for x, y in zip(analytic, numeric))
    worst, skipped = 0.0, 0
    for which, (a, n) in enumerate(zip(analytic, numeric)):
        for index, (ga, gn) in enumerate(zip(a.reshape(-1), n.reshape(-1))):
            err = relative_error(ga, gn)
            if err >= tol and _straddles_kink(scalar, arrays, which, index, ga, step, tol):
                skipped += 1
                continue
            worst = max(worst, err)
    return worst, skipped


def check_parameters(loss_fn, params, rng, per_tensor=4, directions=4, step=1e-4, tol=1e-3):
    """Finite-difference check of a model loss against its backward pass.

    ``loss_fn()`` rebuilds the scalar loss from the current values in
    ``params`` (a name -> Tensor map).  Every tensor gets up to
    ``per_tensor`` coordinates checked individually, and the whole gradient
    is checked along ``directions`` random unit directions.

    A coordinate whose central difference straddles a ReLU kink disagrees
    with the adjoint even though both are right.  Such a coordinate is
    recognised by the adjoint matching one of the one-sided differences;
    it is counted in ``kinks`` and replaced by another draw.

    Returns ``(worst relative error, where, kinks)``.
    """
    for p in params.values():
        p.data = np.array(p.data, dtype=np.float64)  # 0-d values must stay arrays to be edited in place
        p.grad = None
    backward(loss_fn())
    grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy() for n, p in params.items()}

    def value():
        return float(loss_fn().data)

    base_value = value()
    worst, where, kinks = 0.0, None, 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        order = rng.permutation(flat.size)
        checked = 0
        for i in order[:3 * per_tensor]:
            if checked == per_tensor:
                break
            orig = flat[i]
            flat[i] = orig + step
            hi = value()
            flat[i] = orig - step
            lo = value()
            flat[i] = orig
            g = grads[name].reshape(-1)[i]
            err = relative_error(g, (hi - lo) / (2 * step))
            if err >= tol:
                one_sided = ((hi - base_value) / step, (base_value - lo) / step)
                if min(relative_error(g, d) for d in one_sided) < 10 * tol:
                    kinks += 1
                    continue
            checked += 1
            if err > worst:
                worst, where = err, name
    for d in range(directions):
        vec = {n: rng.normal(size=p.shape) for n, p in params.items()}
        norm = np.sqrt(sum(float((v * v).sum()) for v in vec.values()))
        analytic = sum(float((grads[n] * v).sum()) for n, v in vec.items()) / norm
        base = {n: p.data.copy() for n, p in params.items()}
        for sign in (1, -1):
            for n, p in params.items():
                p.data = base[n] + sign * step * vec[n] / norm
            if sign == 1:
                hi = value()
            else:
                lo = value()
        for n, p in params.items():
            p.data = base[n]
        err = relative_error(analytic, (hi - lo) / (2 * step))
        if err > worst:
            worst, where = err, f"direction{d}"
    for p in params.values():
        p.grad = None
    return worst, where, kinks

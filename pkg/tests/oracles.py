"""Independent oracles used to verify the package's numerical paths.

Everything here recomputes results from first principles (pure-Python
potential evaluation, exhaustive grid search, straight-from-definition
metrics, central finite differences) without touching the vectorized /
compiled code paths under test.
"""

from __future__ import annotations

import itertools

import numpy as np


def eval_energy(potentials, y) -> float:
    """Pure-Python energy evaluation straight from the potential definitions."""
    total = 0.0
    for pot in potentials:
        value = pot.form.constant
        for idx, coef in pot.form.terms:
            value += coef * y[idx]
        total += pot.weight * max(value, 0.0) ** pot.exponent
    return total


def _dense(potentials, n_vars):
    A = np.zeros((len(potentials), n_vars))
    b = np.zeros(len(potentials))
    w = np.zeros(len(potentials))
    p = np.zeros(len(potentials))
    for row, pot in enumerate(potentials):
        b[row] = pot.form.constant
        w[row] = pot.weight
        p[row] = pot.exponent
        for idx, coef in pot.form.terms:
            A[row, idx] = coef
    return A, b, w, p


def _grid_eval(A, b, w, p, points) -> np.ndarray:
    """Energy at an (m, n_vars) array of points."""
    ell = points @ A.T + b
    return np.maximum(ell, 0.0) ** p @ w


def _axis(lo, hi, resolution):
    steps = int(round((hi - lo) / resolution)) + 1
    return np.linspace(lo, hi, steps)


def _grid_search(A, b, w, p, axes):
    """Exhaustive search over the cartesian product of per-variable axes.

    The trailing (up to three) axes are evaluated as one vectorized block
    whose linear contribution is computed once; leading axes only shift
    that block by per-potential scalars.
    """
    n_vars = len(axes)
    if n_vars <= 3:
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        vals = _grid_eval(A, b, w, p, points)
        j = int(np.argmin(vals))
        return float(vals[j]), points[j]

    n_head = n_vars - 3
    tail = np.meshgrid(*axes[n_head:], indexing="ij")
    tail_pts = np.stack([m.ravel() for m in tail], axis=1)
    ell_tail = tail_pts @ A[:, n_head:].T + b
    squared = p == 2
    best_val = np.inf
    best_pt = None
    for head in itertools.product(*axes[:n_head]):
        shift = np.asarray(head) @ A[:, :n_head].T
        pos = np.maximum(ell_tail + shift, 0.0)
        pos[:, squared] *= pos[:, squared]
        vals = pos @ w
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val = float(vals[j])
            best_pt = np.concatenate([np.asarray(head), tail_pts[j]])
    return best_val, best_pt


def grid_minimize(potentials, n_vars, resolution=1e-3, refine_to=None):
    """Exhaustive-grid minimum of a hinge energy over [0, 1]^n_vars.

    For 3+ variables a coarse pass (0.01) locates the optimum and a local
    exhaustive pass at ``resolution`` refines it (sound for convex
    energies). ``refine_to`` adds one more local pass, used to reach 1e-6
    in one-dimensional cases.

    Returns (objective, argmin).
    """
    A, b, w, p = _dense(potentials, n_vars)
    if n_vars <= 2:
        axes = [_axis(0.0, 1.0, resolution) for _ in range(n_vars)]
        val, pt = _grid_search(A, b, w, p, axes)
    else:
        coarse = max(resolution, 0.01 if n_vars == 3 else 0.02)
        axes = [_axis(0.0, 1.0, coarse) for _ in range(n_vars)]
        val, pt = _grid_search(A, b, w, p, axes)
        if resolution < coarse:
            axes = [
                _axis(max(0.0, c - 2 * coarse), min(1.0, c + 2 * coarse), resolution)
                for c in pt
            ]
            val, pt = _grid_search(A, b, w, p, axes)
    if refine_to is not None and refine_to < resolution:
        axes = [
            _axis(max(0.0, c - 2 * resolution), min(1.0, c + 2 * resolution), refine_to)
            for c in pt
        ]
        val, pt = _grid_search(A, b, w, p, axes)
    return val, pt


def ref_non_parity(predictions: dict, membership: dict) -> float:
    """Straight-from-definition non-parity."""
    prot = [v for (u, _i), v in predictions.items() if membership[u] == "protected"]
    unprot = [v for (u, _i), v in predictions.items() if membership[u] == "unprotected"]
    return abs(sum(prot) / len(prot) - sum(unprot) / len(unprot))


def ref_value_unfairness(predictions: dict, truth: dict, membership: dict) -> float:
    """Straight-from-definition value unfairness."""
    items = sorted({i for (_u, i) in predictions})
    diffs = []
    for j in items:
        gp = [(u, i) for (u, i) in predictions if i == j and membership[u] == "protected"]
        gu = [(u, i) for (u, i) in predictions if i == j and membership[u] == "unprotected"]
        if not gp or not gu:
            continue
        err_p = sum(predictions[k] for k in gp) / len(gp) - sum(truth[k] for k in gp) / len(gp)
        err_u = sum(predictions[k] for k in gu) / len(gu) - sum(truth[k] for k in gu) / len(gu)
        diffs.append(abs(err_p - err_u))
    return sum(diffs) / len(diffs)


def central_difference_gradient(f, x, step=1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        up = x.copy()
        dn = x.copy()
        up[j] += step
        dn[j] -= step
        grad[j] = (f(up) - f(dn)) / (2.0 * step)
    return grad

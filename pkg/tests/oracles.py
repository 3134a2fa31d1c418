"""Independent reference computations used by the unit and acceptance tests."""
import numpy as np

from forcegrip import mlp


def butterworth_magnitude(f, fc, fs, order, kind):
    """Closed-form |H| of a bilinear-transformed Butterworth filter with pre-warping."""
    ratio = np.tan(np.pi * np.asarray(f, dtype=float) / fs) / np.tan(np.pi * fc / fs)
    if kind == "highpass":
        with np.errstate(divide="ignore"):
            ratio = 1.0 / ratio
    return 1.0 / np.sqrt(1.0 + ratio ** (2 * order))


def reference_loss(weights, x, y, weight_decay):
    """Mean squared error plus L2 on non-bias weights, written out independently
    and evaluated in extended precision.

    ``weights[i]`` is ``(fan_in + 1, fan_out)`` with the bias in row 0; hidden
    layers use ReLU, the last layer is linear.
    """
    ld = np.longdouble
    h = np.asarray(x, dtype=ld)
    for i, w in enumerate(weights):
        w = np.asarray(w, dtype=ld)
        h = h @ w[1:] + w[0]
        if i < len(weights) - 1:
            h = np.where(h > 0, h, ld(0))
    err = h[:, 0] - np.asarray(y, dtype=ld)
    penalty = sum(np.sum(np.asarray(w, dtype=ld)[1:] ** 2) for w in weights)
    return np.mean(err * err) + ld(weight_decay) * penalty


def finite_difference_grads(model, x, y, weight_decay, h=1e-5):
    """Central differences (step ``h``) of :func:`reference_loss` for every parameter.

    For a fixed ReLU pattern the loss is quadratic in any single weight, so
    the central difference is exact up to rounding, which the extended
    precision keeps far below the gradients being checked.
    """
    weights = [np.asarray(w, dtype=np.longdouble).copy() for w in model.weights]
    grads = []
    for w in weights:
        g = np.zeros(w.shape)
        for idx in np.ndindex(w.shape):
            keep = w[idx]
            w[idx] = keep + h
            up = reference_loss(weights, x, y, weight_decay)
            w[idx] = keep - h
            down = reference_loss(weights, x, y, weight_decay)
            w[idx] = keep
            g[idx] = float((up - down) / (2 * np.longdouble(h)))
        grads.append(g)
    return grads


def random_small_model(rng, sizes=(4, 5, 5, 1)):
    weights = [rng.normal(0.0, 0.7, (n_in + 1, n_out)) for n_in, n_out in zip(sizes[:-1], sizes[1:])]
    return mlp.MlpModel(sizes, weights)


def max_relative_error(analytic, numeric, floor=1e-12):
    """Largest per-parameter |a - n| / max(|a|, |n|); the floor only guards 0/0 on dead units."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradient_check(draws=100, seed=0):
    """Worst relative error over ``draws`` random models and batches."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        model = random_small_model(rng)
        x = rng.standard_normal((6, 4))
        y = rng.standard_normal(6)
        lam = float(rng.uniform(0.0, 0.1))
        worst = max(worst, max_relative_error(mlp.backward(model, x, y, lam),
                                              finite_difference_grads(model, x, y, lam)))
    return worst


def adam_bowl(dim=50, steps=2000, lr=0.01, seed=0):
    """Distance to the optimum of ||w - w*||^2 after ``steps`` ADAM updates from w = 0.

    ADAM moves each coordinate by roughly ``lr`` per step, so the optimum is
    drawn from [-1, 1] to keep it reachable at the slow end of the lr range.
    """
    rng = np.random.default_rng(seed)
    target = rng.uniform(-1.0, 1.0, dim)
    w = [np.zeros(dim)]
    state = mlp.AdamState.zeros_like(w)
    for _ in range(steps):
        mlp.adam_step(state, w, [2.0 * (w[0] - target)], lr)
    return float(np.linalg.norm(w[0] - target))

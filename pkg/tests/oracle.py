"""Brute-force reference evaluator for GPCM quantities.

Written in plain ``math`` with explicit sums so it shares no code path with
the package. Used to freeze expected values and as a cross-check in tests.
"""
import math

TABLE1 = [
    (1.476, (-1.726, -0.145, -0.849, 1.765)),
    (1.202, (-1.285, 0.248, 0.868, 1.433)),
    (1.390, (-1.109, -0.099, -0.257, 1.196)),
    (0.880, (-1.855, -0.105, 0.526, 1.271)),
    (1.047, (-2.198, 0.274, 1.038, 2.126)),
    (1.256, (-1.059, -0.542, 0.716, 1.858)),
    (1.090, (-1.326, -0.351, 0.669, 1.305)),
    (0.996, (-1.895, -1.475, 0.288, 1.392)),
    (0.985, (-0.707, -0.949, 0.369, 1.296)),
    (0.983, (-1.793, -0.567, 0.517, 1.571)),
    (1.150, (-1.972, -0.198, 0.092, 1.169)),
    (1.291, (-1.503, -0.648, 0.863, 2.453)),
    (1.530, (-1.447, -0.623, 0.900, 1.557)),
    (0.906, (-2.284, -0.201, 0.903, 1.623)),
    (1.213, (-1.385, -0.486, 0.632, 1.224)),
    (0.803, (-1.494, -0.859, 0.923, 1.546)),
    (0.773, (-1.009, -0.518, -0.438, 1.309)),
    (0.933, (-1.140, -0.310, 1.691, 1.721)),
    (1.408, (-1.459, -0.471, 0.736, 0.832)),
    (1.044, (-1.709, -0.454, -0.320, 1.149)),
]


def gpcm_probs(theta, a, steps):
    # delta_1 = 0 followed by the stored steps; categories c = 1..m
    deltas = [0.0] + list(steps)
    m = len(deltas)
    numer = []
    for c in range(1, m + 1):
        total = 0.0
        for h in range(1, c + 1):
            total += a * (theta - deltas[h - 1])
        numer.append(math.exp(total))
    denom = sum(numer)
    return [x / denom for x in numer]


def gpcm_loglik(responses, items, thetas):
    total = 0.0
    for i, row in enumerate(responses):
        for j, u in enumerate(row):
            a, steps = items[j]
            total += math.log(gpcm_probs(thetas[i], a, steps)[u])
    return total


def item_logp(theta, log_a, steps, response):
    return math.log(gpcm_probs(theta, math.exp(log_a), steps)[response])


def fd_grad_item(theta, a, steps, response, h=1e-5):
    """Central differences over (log a, step_1, ..., step_{m-1})."""
    x = [math.log(a)] + list(steps)
    out = []
    for k in range(len(x)):
        up = list(x)
        dn = list(x)
        up[k] += h
        dn[k] -= h
        f_up = item_logp(theta, up[0], up[1:], response)
        f_dn = item_logp(theta, dn[0], dn[1:], response)
        out.append((f_up - f_dn) / (2 * h))
    return out


def fd_grad_theta(theta, items, responses, h=1e-5):
    def f(t):
        return sum(math.log(gpcm_probs(t, a, s)[u]) for (a, s), u in zip(items, responses))
    return (f(theta + h) - f(theta - h)) / (2 * h)


def softmax(z):
    mx = max(z)
    e = [math.exp(v - mx) for v in z]
    tot = sum(e)
    return [v / tot for v in e]


def psrf(chains):
    """Gelman-Rubin R-hat written out longhand; ``chains`` is a list of equal-length lists."""
    m = len(chains)
    n = len(chains[0])
    means = [sum(c) / n for c in chains]
    grand = sum(means) / m
    b = n * sum((x - grand) ** 2 for x in means) / (m - 1)
    w = sum(sum((v - mu) ** 2 for v in c) / (n - 1) for c, mu in zip(chains, means)) / m
    return math.sqrt(((n - 1) / n * w + b / n) / w)


def log_prior_at_zero(n_items_steps, n_log_a, n_theta):
    """Log prior density with every unconstrained coordinate at 0 (so sigma = 1)."""
    half_log_2pi = 0.5 * math.log(2 * math.pi)
    total = -(n_items_steps + n_log_a + n_theta) * half_log_2pi
    total += -math.log(5.0) - half_log_2pi  # mu ~ N(0, 5) at 0
    total += math.log(2.0 / (5.0 * math.pi)) - math.log(1.0 + 1.0 / 25.0)  # half-Cauchy at 1
    return total  # log-Jacobian of sigma = exp(0) is 0


def marginal_log_posterior(x, patterns, counts, n_steps_per_item, n_nodes=321):
    """Log posterior of the hierarchical GPCM with abilities integrated out.

    ``x`` = (log a_1..J, steps item-major, mu, log sigma). Integration uses a
    trapezoid grid on [-8, 8]; the code path is separate from the package.
    """
    import numpy as np

    nodes = np.linspace(-8.0, 8.0, n_nodes)
    log_w = -0.5 * nodes**2
    log_w -= np.log(np.exp(log_w).sum())
    n_items = len(n_steps_per_item)
    log_a = np.asarray(x[:n_items])
    mu, log_sigma = x[-2], x[-1]
    steps = np.asarray(x[n_items:-2])
    ll = np.tile(log_w[:, None], (1, len(patterns)))
    off = 0
    for j, ns in enumerate(n_steps_per_item):
        a = math.exp(log_a[j])
        cum = np.concatenate([[0.0], np.cumsum(steps[off:off + ns])])
        off += ns
        s = a * (np.arange(ns + 1)[None, :] * nodes[:, None] - cum[None, :])
        top = s.max(axis=1, keepdims=True)
        logp = s - top - np.log(np.exp(s - top).sum(axis=1, keepdims=True))
        ll += logp[:, [p[j] for p in patterns]]
    top = ll.max(axis=0)
    value = float(np.dot(counts, top + np.log(np.exp(ll - top).sum(axis=0))))
    sigma = math.exp(log_sigma)
    value += float(-0.5 * log_a @ log_a - 0.5 * np.sum(((steps - mu) / sigma) ** 2)
                   - steps.size * log_sigma)
    value += -0.5 * (mu / 5.0) ** 2 - math.log1p((sigma / 5.0) ** 2) + log_sigma
    return value  # up to an additive constant


def random_walk_metropolis(logp, x0, scales, n_iter, burn, thin, seed):
    import numpy as np

    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    cur = logp(x)
    out = []
    for it in range(n_iter):
        y = x + scales * rng.standard_normal(x.size)
        v = logp(y)
        if math.log(rng.random()) < v - cur:
            x, cur = y, v
        if it >= burn and (it - burn) % thin == 0:
            out.append(x.copy())
    return np.array(out)

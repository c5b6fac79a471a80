"""Independent reference computations shared by several test modules."""

import numpy as np


def central_gradient(f, x, rel_h=1e-4, points=3):
    """Row-wise central-difference gradient of a batched scalar function.

    ``points=5`` uses the fourth-order stencil, needed where curvature is large.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.empty_like(x)
    for j in range(x.shape[1]):
        h = rel_h * np.maximum(1.0, np.abs(x[:, j]))
        e = np.zeros_like(x)
        e[:, j] = h
        if points == 5:
            g[:, j] = (8 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12 * h)
        else:
            g[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def sign_test_pvalue(wins, n):
    """One-sided exact binomial p-value of at least ``wins`` successes out of ``n``."""
    from scipy.stats import binomtest

    return binomtest(wins, n, 0.5, alternative="greater").pvalue


def class_log_posterior(q, label, x):
    """``log p(label | x)`` of a labelled mixture via per-component scipy log-densities."""
    from scipy.special import logsumexp
    from scipy.stats import multivariate_normal

    x = np.atleast_2d(x)
    log_joint = np.stack(
        [np.log(w) + multivariate_normal(m, c).logpdf(x) for w, m, c in zip(q.weights, q.means, q.covariances)], axis=-1
    ).reshape(len(x), -1)
    in_class = np.asarray(q.labels) == label
    return logsumexp(log_joint[:, in_class], axis=1) - logsumexp(log_joint, axis=1)

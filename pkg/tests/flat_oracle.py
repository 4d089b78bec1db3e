"""Test-side flat (unfiltered) SGD trainers used as oracles.

These train over ALL classes with plain per-example SGD and never import the
library's training code. The bias is deliberately parameterized as two
additive vectors (a global one and a "node" one) because the composed model
under a single-leaf tree carries exactly that structure; the family is still
an ordinary flat softmax / independent-logistic model.

The random stream mirrors the documented order of the library trainer: one
``default_rng(seed)``, weight-init draws first, then one permutation per
epoch. With a single-leaf tree the trainer consumes no path draws, so the
streams coincide and per-step losses can be compared exactly.
"""

import numpy as np


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def flat_train_softmax(ds, epochs, lr, lr_decay, seed, collect_losses=False):
    d, c, n = ds.d, ds.c, ds.n
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, c)) / np.sqrt(max(d, 1))
    gb = np.zeros(c)
    nb = np.zeros(c)
    cls = ds.class_ids()
    X = ds.features
    losses = []
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            row = X.row(i)
            s = row.vals @ W[row.cols] + gb + nb
            shifted = s - s.max()
            e = np.exp(shifted)
            z = e.sum()
            if collect_losses:
                losses.append(float(np.log(z) - shifted[cls[i]]))
            g = e / z
            g[cls[i]] -= 1.0
            eta = lr / (1.0 + lr_decay * t)
            t += 1
            W[row.cols] = W[row.cols] - eta * np.outer(row.vals, g)
            gb[np.arange(c)] = gb[np.arange(c)] - eta * g
            nb -= eta * g
    return {"W": W, "gb": gb, "nb": nb, "losses": losses}


def flat_train_ilr(ds, epochs, lr, lr_decay, seed, collect_losses=False):
    d, c, n = ds.d, ds.c, ds.n
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, c)) / np.sqrt(max(d, 1))
    gb = np.zeros(c)
    nb = np.zeros(c)
    X, Y = ds.features, ds.labels
    losses = []
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            row = X.row(i)
            lab = Y.row(i)
            targets = np.isin(np.arange(c), lab.cols).astype(np.float64)
            s = row.vals @ W[row.cols] + gb + nb
            p = _stable_sigmoid(s)
            if collect_losses:
                eps_p = np.clip(p, 1e-300, 1.0 - 1e-16)
                loss = -(targets * np.log(eps_p) + (1 - targets) * np.log1p(-eps_p))
                losses.append(float(loss.sum()))
            g = p - targets
            eta = lr / (1.0 + lr_decay * t)
            t += 1
            W[row.cols] = W[row.cols] - eta * np.outer(row.vals, g)
            gb[np.arange(c)] = gb[np.arange(c)] - eta * g
            nb -= eta * g
    return {"W": W, "gb": gb, "nb": nb, "losses": losses}


def flat_scores(row, params):
    return row.vals @ params["W"][row.cols] + params["gb"] + params["nb"]


def flat_accuracy(ds, params):
    cls = ds.class_ids()
    correct = 0
    for i in range(ds.n):
        s = flat_scores(ds.features.row(i), params)
        if int(np.argmax(s)) == int(cls[i]):
            correct += 1
    return correct / ds.n

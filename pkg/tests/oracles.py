"""Independent reference computations used to freeze expected values.

Nothing here imports the package: each routine is written from the math
definition with plain Python / numpy loops.
"""
import math

import numpy as np


def jacobi_eigenvalues(M, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations on a symmetric matrix; ascending eigenvalues."""
    A = np.array(M, dtype=float)
    n = len(A)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
    return sorted(A[i, i] for i in range(n))


def normalized_laplacian(W):
    W = np.asarray(W, dtype=float)
    n = len(W)
    deg = [sum(W[i]) for i in range(n)]
    return np.array([[(1.0 if i == j else 0.0) - W[i, j] / math.sqrt(deg[i] * deg[j]) for j in range(n)]
                     for i in range(n)])


def pair_count_auc(scores, labels):
    """P(positive outranks negative), ties counted one half, by enumerating pairs."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def confusion_macro_f1(y_true, y_pred, classes):
    f1s = []
    for c in classes:
        tp = sum(1 for a, b in zip(y_true, y_pred) if a == c and b == c)
        fp = sum(1 for a, b in zip(y_true, y_pred) if a != c and b == c)
        fn = sum(1 for a, b in zip(y_true, y_pred) if a == c and b != c)
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(f1s) / len(f1s)


def loop_sbd(x, y):
    """1 - max over circular shifts of <x, roll(y, w)> / (|x| |y|), by direct loops."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    S = len(x)
    nx = math.sqrt((x * x).sum())
    ny = math.sqrt((y * y).sum())
    best = -math.inf
    for w in range(S):
        acc = 0.0
        for t in range(S):
            acc += float(x[t] @ y[(t - w) % S])
        best = max(best, acc / (nx * ny))
    return 1.0 - best


def scalar_softmax(scores):
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    z = sum(e)
    return [v / z for v in e]


def scalar_infonce(pos_sim, neg_sims, tau):
    num = math.exp(pos_sim / tau)
    return -math.log(num / (num + sum(math.exp(s / tau) for s in neg_sims)))


def cross_entropy_term(p_true):
    return -math.log(p_true)


def scan_handoffs(holders):
    """Number of slices where the ball moves between two known holders."""
    return sum(1 for a, b in zip(holders, holders[1:]) if a is not None and b is not None and a != b)


def nearest_motif_labels(X, motifs):
    """Label each series with the motif of smallest loop SBD."""
    return [int(np.argmin([loop_sbd(x, m) for m in motifs])) for x in X]


def rodrigues(axis, angle):
    a, b, c = axis
    ct, st = math.cos(angle), math.sin(angle)
    K = np.array([[0, -c, b], [c, 0, -a], [-b, a, 0]], dtype=float)
    return np.eye(3) + st * K + (1 - ct) * K @ K

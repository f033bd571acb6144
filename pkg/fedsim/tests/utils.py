"""Independent reference implementations the library is checked against"""

import math

import numpy as np


def naive_matmul(a, b):
    rows, inner = len(a), len(a[0])
    cols = len(b[0])
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            total = 0.0
            for k in range(inner):
                total += a[i][k] * b[k][j]
            out[i, j] = total

    return out


def naive_forward(layer_sizes, p, x):
    """Scalar-by-scalar forward pass of one input row"""
    activations = [float(value) for value in x]
    offset = 0
    n_layers = len(layer_sizes) - 1
    for layer in range(n_layers):
        fan_in, fan_out = layer_sizes[layer], layer_sizes[layer + 1]
        weights = p[offset : offset + fan_in * fan_out]
        bias = p[offset + fan_in * fan_out : offset + fan_in * fan_out + fan_out]
        offset += fan_in * fan_out + fan_out
        outputs = []
        for j in range(fan_out):
            total = bias[j]
            for i in range(fan_in):
                total += activations[i] * weights[i * fan_out + j]
            outputs.append(total if layer == n_layers - 1 else max(total, 0.0))

        activations = outputs

    return activations


def row_loop_evaluate(layer_sizes, p, features, labels):
    """Accuracy and mean cross-entropy, one row at a time"""
    correct = 0
    total_loss = 0.0
    for x, label in zip(features, labels):
        logits = naive_forward(layer_sizes, p, x)
        best = max(range(len(logits)), key=lambda k: (logits[k], -k))
        correct += best == label
        top = max(logits)
        total_loss += math.log(sum(math.exp(v - top) for v in logits)) - (logits[label] - top)

    return correct / len(labels), total_loss / len(labels)


def central_differences(loss, p, eps=1e-6):
    gradient = np.zeros_like(p)
    for i in range(len(p)):
        forward, backward = p.copy(), p.copy()
        forward[i] += eps
        backward[i] -= eps
        gradient[i] = (loss(forward) - loss(backward)) / (2 * eps)

    return gradient


def weighted_sum(weights, vectors):
    total = sum(weights)
    out = [0.0] * len(vectors[0])
    for weight, vector in zip(weights, vectors):
        for i, value in enumerate(vector):
            out[i] += weight * value / total

    return np.array(out)


def quadratic_minimizer(centers, curvatures):
    """Minimizer of the summed diagonal quadratics, by a direct linear solve"""
    hessian = np.diag(np.sum(curvatures, axis=0))
    rhs = np.sum(np.asarray(curvatures) * np.asarray(centers), axis=0)
    return np.linalg.solve(hessian, rhs)


def fedavg_fixed_point(centers, curvatures, lr, steps, start, iterations=100_000):
    """
    Iterate the exact round map of equally weighted FedAvg on diagonal
    quadratics until it stops moving.
    """
    w = np.array(start, dtype=np.float64)
    for _ in range(iterations):
        client_models = []
        for center, curvature in zip(centers, curvatures):
            y = w.copy()
            for _ in range(steps):
                y = y - lr * curvature * (y - center)
            client_models.append(y)

        updated = np.mean(client_models, axis=0)
        if np.max(np.abs(updated - w)) < 1e-15:
            return updated
        w = updated

    return w

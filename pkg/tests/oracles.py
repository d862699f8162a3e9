"""Independent reference implementations used only by the tests."""

import math

import numpy as np

BLADES = [
    (), (1,), (2,), (3,), (4,), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4),
    (1, 2, 3), (1, 2, 4), (1, 3, 4), (2, 3, 4), (1, 2, 3, 4),
]


def blade_product(a, b, squares):
    """Multiply two blades given as generator tuples by bubble-sorting the word."""
    word = list(a) + list(b)
    sign = 1
    changed = True
    while changed:
        changed = False
        for i in range(len(word) - 1):
            if word[i] > word[i + 1]:
                word[i], word[i + 1] = word[i + 1], word[i]
                sign = -sign
                changed = True
    out = []
    for g in word:
        if out and out[-1] == g:
            out.pop()
            sign *= squares[g - 1]
        else:
            out.append(g)
    return sign, tuple(out)


def product(a, b, squares):
    """Geometric product by expanding over all 256 blade pairs."""
    out = np.zeros(16)
    for i, bi in enumerate(BLADES):
        for j, bj in enumerate(BLADES):
            if a[i] == 0 or b[j] == 0:
                continue
            s, blade = blade_product(bi, bj, squares)
            out[BLADES.index(blade)] += s * a[i] * b[j]
    return out


def householder(n):
    n = np.asarray(n, float) / np.linalg.norm(n)
    return np.eye(3) - 2 * np.outer(n, n)


def rotation_matrix(axis, angle):
    """Rodrigues' formula."""
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx


def softmax_attention(q, k, v):
    s = q @ k.T / math.sqrt(q.shape[-1])
    s = np.exp(s - s.max(axis=-1, keepdims=True))
    return (s / s.sum(axis=-1, keepdims=True)) @ v

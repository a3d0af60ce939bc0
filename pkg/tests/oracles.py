"""Independent reference implementations used by unit and acceptance tests.

These deliberately avoid the library's vectorized paths: the attention
reference is a literal triple loop, the loss oracle is plain exp/sum/log,
and the Adam oracle is a scalar Python recurrence.
"""

import math

import numpy as np

from patchcraft.autodiff import Tensor
from patchcraft.vit import BlockParams


def random_block(dim, mlp_dims=None, seed=0, scale=0.5) -> BlockParams:
    rng = np.random.default_rng(seed)
    mlp_dims = mlp_dims if mlp_dims is not None else (2 * dim, dim)

    def t(*shape):
        return Tensor(rng.normal(0.0, scale, shape).astype(np.float32),
                      requires_grad=True)

    def ln():
        return (Tensor(np.ones(dim, dtype=np.float32), requires_grad=True),
                Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True))

    g1, b1 = ln()
    g2, b2 = ln()
    mlp = []
    width = dim
    for out in mlp_dims:
        mlp.append((t(out, width), t(out)))
        width = out
    return BlockParams(ln1_gamma=g1, ln1_beta=b1,
                       q_weight=t(dim, dim), q_bias=t(dim),
                       k_weight=t(dim, dim), k_bias=t(dim),
                       v_weight=t(dim, dim), v_bias=t(dim),
                       out_weight=t(dim, dim), out_bias=t(dim),
                       ln2_gamma=g2, ln2_beta=b2, mlp=mlp)


def reference_mhsa(seq: np.ndarray, block: BlockParams, num_heads: int) -> np.ndarray:
    """Literal triple-loop attention (head, query, key) in float64."""
    x = seq.astype(np.float64)
    q = x @ block.q_weight.data.astype(np.float64).T + block.q_bias.data
    k = x @ block.k_weight.data.astype(np.float64).T + block.k_bias.data
    v = x @ block.v_weight.data.astype(np.float64).T + block.v_bias.data
    t_len, dim = x.shape
    d = dim // num_heads
    merged = np.zeros((t_len, dim))
    for h in range(num_heads):
        lo = h * d
        for i in range(t_len):
            scores = np.empty(t_len)
            for j in range(t_len):
                dot = 0.0
                for c in range(d):
                    dot += q[i, lo + c] * k[j, lo + c]
                scores[j] = dot / math.sqrt(d)
            exps = np.exp(scores - scores.max())
            attn = exps / exps.sum()
            for j in range(t_len):
                for c in range(d):
                    merged[i, lo + c] += attn[j] * v[j, lo + c]
    return merged @ block.out_weight.data.astype(np.float64).T + block.out_bias.data


def naive_cross_entropy(logits: np.ndarray, labels) -> float:
    """Plain per-row exp/sum/log, no log-sum-exp fusion."""
    total = 0.0
    for row, label in zip(logits.astype(np.float64), labels):
        probs = np.exp(row) / np.exp(row).sum()
        total += -math.log(probs[label])
    return total / len(labels)


def scalar_adam_oracle(grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0, theta0=0.0):
    """Run the Adam recurrence on one scalar with plain Python floats."""
    theta, m, v = theta0, 0.0, 0.0
    history = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps) - lr * wd * theta
        history.append(theta)
    return history

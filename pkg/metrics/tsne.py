"""
Exact t-SNE for comparing image distributions (e.g. real vs synthetic rain).
O(n^2) memory and time; meant for corpora of a few thousand images.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.spatial.distance import pdist, squareform
from tqdm import tqdm

from utils.errors import ConfigurationError


MAX_POINTS = 5000
MIN_PERPLEXITY = 5.0

initial_momentum = 0.5
final_momentum = 0.8
momentum_switch = 20
min_learning_rate = 50.0
min_gain = 0.01
exaggeration = 4.0
exaggeration_iters = 100


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_trace: List[float] = field(default_factory=list)


def check_perplexity(perplexity, count):
    if count > MAX_POINTS:
        raise ConfigurationError(f"Exact t-SNE handles at most {MAX_POINTS} points, got {count}.")
    upper = (count - 1) / 3.0
    if not MIN_PERPLEXITY <= perplexity <= upper:
        raise ConfigurationError(
            f"Perplexity {perplexity} out of range [{MIN_PERPLEXITY}, {upper:.2f}] for {count} points."
        )


def Hbeta(D, beta=1.0):
    """Entropy and normalized affinities of one row for precision beta."""
    P = np.exp(-(D - D.min()) * beta)
    sumP = np.sum(P)
    H = np.log(sumP) + beta * np.sum((D - D.min()) * P) / sumP
    return H, P / sumP


def x2p(D, perplexity, tol=1e-5, max_tries=50):
    """
    Conditional affinities P(j|i): per-row binary search on the Gaussian
    precision until the row entropy matches log(perplexity).

    Args:
        D (np.ndarray): (n, n) squared distances.
    """
    n = D.shape[0]
    P = np.zeros((n, n))
    beta = np.ones(n)
    logU = np.log(perplexity)

    for i in range(n):
        betamin, betamax = -np.inf, np.inf
        Di = np.concatenate([D[i, :i], D[i, i + 1:]])
        H, thisP = Hbeta(Di, beta[i])
        Hdiff = H - logU
        tries = 0
        while abs(Hdiff) > tol and tries < max_tries:
            if Hdiff > 0:
                betamin = beta[i]
                beta[i] = beta[i] * 2.0 if betamax == np.inf else (beta[i] + betamax) / 2.0
            else:
                betamax = beta[i]
                beta[i] = beta[i] / 2.0 if betamin == -np.inf else (beta[i] + betamin) / 2.0
            H, thisP = Hbeta(Di, beta[i])
            Hdiff = H - logU
            tries += 1
        P[i, :i] = thisP[:i]
        P[i, i + 1:] = thisP[i:]

    logging.debug("Mean value of sigma: %f", float(np.mean(np.sqrt(1.0 / beta))))
    return P


def joint_probabilities(features, perplexity):
    D = squareform(pdist(np.asarray(features, dtype=np.float64), "sqeuclidean"))
    P = x2p(D, perplexity)
    P = P + P.T
    return np.maximum(P / np.sum(P), 1e-12)


def _affinities(Y):
    num = 1.0 / (1.0 + squareform(pdist(Y, "sqeuclidean")))
    np.fill_diagonal(num, 0.0)
    return num, np.maximum(num / np.sum(num), 1e-12)


def kl_divergence(P, Q):
    return float(np.sum(P * np.log(P / Q)))


def learning_rate_for(count):
    """Step size scaled to the corpus: max(n / exaggeration / 4, 50)."""
    return max(count / exaggeration / 4.0, min_learning_rate)


def tsne_embed(features, perplexity=30.0, iterations=1000, seed=0, no_dims=2, check=True, learning_rate=None):
    """
    Embed feature vectors in 2-D by minimizing KL(P || Q) with momentum
    gradient descent, adaptive gains and early exaggeration.

    The input enters only through pairwise distances; the initialization is
    drawn from `seed`. The step size defaults to `learning_rate_for(n)`.

    Returns:
        TsneResult: (n, 2) embedding and the KL objective at every iteration,
        always measured against the unexaggerated P.
    """
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if check:
        check_perplexity(perplexity, n)
    elif not 2 <= n <= MAX_POINTS:
        raise ConfigurationError(f"t-SNE needs between 2 and {MAX_POINTS} points, got {n}.")

    P = joint_probabilities(X, perplexity)
    eta = learning_rate or learning_rate_for(n)
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, no_dims))
    iY = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []

    for it in tqdm(range(iterations), desc="t-SNE", leave=False):
        scale = exaggeration if it < exaggeration_iters else 1.0
        num, Q = _affinities(Y)

        PQ = (scale * P - Q) * num
        dY = 4.0 * (np.diag(PQ.sum(axis=1)) - PQ) @ Y

        momentum = initial_momentum if it < momentum_switch else final_momentum
        same_sign = (dY > 0.0) == (iY > 0.0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, min_gain)
        iY = momentum * iY - eta * (gains * dY)
        Y = Y + iY
        Y = Y - Y.mean(axis=0)

        trace.append(kl_divergence(P, Q))
        if (it + 1) % 100 == 0:
            logging.debug("t-SNE iteration %d: KL %f", it + 1, trace[-1])

    if trace:
        logging.info("t-SNE of %d points finished: KL %.4f after %d iterations.", n, trace[-1], iterations)
    return TsneResult(embedding=Y, kl_trace=trace)

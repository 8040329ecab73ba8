import numpy as np
from scipy.special import expit, log_softmax


def _check(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    return logits, labels


def nll_log_softmax(logits, labels):
    """
    Mean negative log-likelihood of a softmax classifier.

    Returns:
        tuple: (loss, d loss / d logits)
    """
    logits, labels = _check(logits, labels)
    n = logits.shape[0]
    log_p = log_softmax(logits, axis=1)
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def nll_log_sigmoid(logits, labels):
    """
    One-vs-rest Bernoulli likelihood: every output is an independent log-sigmoid
    detector for its class.
    """
    logits, labels = _check(logits, labels)
    n = logits.shape[0]
    target = np.zeros_like(logits)
    target[np.arange(n), labels] = 1.0
    # -log sigma(z) for the true class, -log(1 - sigma(z)) for the others
    per_item = np.logaddexp(0.0, -logits) * target + np.logaddexp(0.0, logits) * (1.0 - target)
    loss = per_item.sum(axis=1).mean()
    return float(loss), (expit(logits) - target) / n


LOSSES = {
    'log_softmax': nll_log_softmax,
    'log_sigmoid': nll_log_sigmoid,
}


def loss_for_head(head):
    try:
        return LOSSES[head]
    except KeyError:
        raise ValueError(f"head must be one of {sorted(LOSSES)}, got {head!r}") from None

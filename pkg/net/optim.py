import numpy as np


class AdamW:
    """
    Adam with decoupled weight decay over a list of numpy tensors updated in place.

    Each step applies
        w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * w
    with bias-corrected moments m_hat, v_hat.

    Args:
        params (list): Arrays to update in place
        lr (float): Learning rate
        betas (tuple): Moment decay rates
        eps (float): Denominator floor
        weight_decay (float): Decoupled decay coefficient
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-5):
        if lr <= 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        if weight_decay < 0.0:
            raise ValueError(f"weight_decay must be non-negative, got {weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * ((m / bias1) / (np.sqrt(v / bias2) + self.eps))
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p
            p -= update

    def state_dict(self):
        return {'t': self.t, 'lr': self.lr, 'betas': [self.beta1, self.beta2], 'eps': self.eps,
                'weight_decay': self.weight_decay}

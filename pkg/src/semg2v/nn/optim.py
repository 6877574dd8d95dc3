import numpy as np


def adam_step(store, lr, beta1=0.9, beta2=0.98, eps=1e-9):
    """Bias-corrected Adam update of every parameter in ``store``; clears gradients."""
    missing = [name for name, p in store if p.grad is None]
    if missing:
        raise ValueError(f"no gradient for parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store:
        g = p.grad
        m = store.adam_m.get(name)
        v = store.adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.adam_m[name], store.adam_v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def global_grad_norm(store):
    return float(np.sqrt(sum(float((p.grad ** 2).sum()) for _, p in store if p.grad is not None)))


def clip_grad_norm(store, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(store)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for _, p in store:
            if p.grad is not None:
                p.grad *= scale
    return norm

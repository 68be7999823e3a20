"""Central finite-difference gradient comparison for small float64 models."""
import torch


def n_params(params):
    return sum(p.numel() for p in params)


def fd_relative_error(loss_fn, params, eps=1e-6, fd_fn=None):
    """max over tensors of |g_analytic - g_fd| / max(|g_analytic|, |g_fd|), using vector norms.

    ``fd_fn`` (default ``loss_fn``) is the function differenced numerically.
    """
    fd_fn = fd_fn or loss_fn
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    # parameters outside the autograd graph cannot influence the loss
    params = [p for p in params if p.grad is not None]
    analytic = [p.grad.detach().clone() for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            fd = torch.zeros_like(p)
            flat, fd_flat = p.view(-1), fd.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = fd_fn().item()
                flat[i] = old - eps
                down = fd_fn().item()
                flat[i] = old
                fd_flat[i] = (up - down) / (2 * eps)
            scale = max(g.norm().item(), fd.norm().item())
            if scale > 1e-8:
                worst = max(worst, (g - fd).norm().item() / scale)
    return worst

"""Shared fixtures for the unit and acceptance suites."""
import numpy as np
import torch

from moveint.losses import total_loss
from moveint.model import ModelConfig, MoVEInt


def toy_model(seed: int = 0) -> MoVEInt:
    """Tiny float64 model: latent 2, widths 8/4, two components."""
    torch.manual_seed(seed)
    cfg = ModelConfig(6, 4, hidden_widths=(8, 4), latent_dim=2, n_components=2, recurrent_width=4)
    return MoVEInt(cfg).double()


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    Central differences at h = 1e-5 carry roughly 1e-10 absolute rounding
    error on a loss of order 10, so entries much smaller than the floor cannot
    be resolved to 1e-4 relative accuracy and are compared on the floor scale.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradient_check(seed: int = 0, T: int = 6, h: float = 1e-5, beta: float = 0.5, n_params: int | None = None) -> float:
    """Max relative error between autograd and central differences of total_loss.

    The reparameterization noise is frozen by reseeding the generator before
    every evaluation, so the loss is a deterministic function of the weights.
    A large beta keeps the KL and separation terms visible in the gradient.
    """
    model = toy_model(seed)
    rng = np.random.default_rng(seed)
    xh = torch.as_tensor(rng.normal(size=(T, 6)))
    xr = torch.as_tensor(rng.normal(size=(T, 4)))

    def loss():
        return total_loss(model, xh, xr, beta=beta, n_samples=2, generator=torch.Generator().manual_seed(seed + 1)).total

    model.zero_grad()
    loss().backward()
    params = list(model.parameters())
    analytic = np.concatenate([p.grad.detach().numpy().ravel() for p in params])

    flat = [(p, i) for p in params for i in range(p.numel())]
    if n_params is not None and n_params < len(flat):
        pick = rng.choice(len(flat), size=n_params, replace=False)
        flat = [flat[k] for k in sorted(pick)]
        offsets = np.cumsum([0] + [p.numel() for p in params])
        index = {id(p): offsets[k] for k, p in enumerate(params)}
        analytic = np.array([analytic[index[id(p)] + i] for p, i in flat])

    numeric = np.empty(len(flat))
    with torch.no_grad():
        for k, (p, i) in enumerate(flat):
            view = p.view(-1)
            orig = view[i].item()
            view[i] = orig + h
            up = loss().item()
            view[i] = orig - h
            down = loss().item()
            view[i] = orig
            numeric[k] = (up - down) / (2 * h)
    return float(relative_error(analytic, numeric).max())

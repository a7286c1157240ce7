"""Training losses as graph ops."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .metrics import batch_chamfer
from .numerics.functional import mse
from .numerics.tensor import Tensor, as_tensor, make_op


def chamfer_loss(pred: Tensor, target) -> Tensor:
    """Batch-mean Chamfer distance between ``pred (B, N, 3)`` and a fixed ``target (B, M, 3)``."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    single = pred.ndim == 2
    p = pred.data[None] if single else pred.data
    t = target[None] if target.ndim == 2 else target
    if p.ndim != 3 or t.ndim != 3 or p.shape[0] != t.shape[0] or p.shape[2] != 3 or t.shape[2] != 3:
        raise ContractError(f"chamfer_loss shapes: pred {pred.shape}, target {target.shape}")
    values, grad = batch_chamfer(p, t)
    b = len(values)

    def bw(g):
        out = grad * (g / b)
        return (out[0] if single else out,)

    return make_op(np.array(values.mean()), (pred,), bw, "chamfer")


def latent_mse(g, z) -> Tensor:
    """Alignment loss between geometric latents ``g`` and CSI latents ``z``."""
    return mse(z, g)

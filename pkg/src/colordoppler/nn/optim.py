"""AdamW with decoupled weight decay and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


@torch.no_grad()
def adamw_step(params, grads, exp_avgs, exp_avg_sqs, step, *, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-2):
    """One in-place AdamW update of every tensor in ``params``.

    ``step`` is the 1-based step count used for bias correction. The decay
    ``p <- p (1 - lr wd)`` is applied before the Adam move.
    """
    bc1 = 1 - beta1**step
    bc2 = 1 - beta2**step
    for p, g, m, v in zip(params, grads, exp_avgs, exp_avg_sqs):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        p.mul_(1 - lr * weight_decay)
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)


class AdamW(torch.optim.Optimizer):
    """Optimizer wrapper around :func:`adamw_step`; parameters without a gradient are skipped."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        if lr <= 0 or eps <= 0 or weight_decay < 0 or not all(0 <= b < 1 for b in betas):
            raise ValueError("invalid AdamW hyperparameters")
        super().__init__(params, dict(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            ps, gs, ms, vs = [], [], [], []
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                ps.append(p)
                gs.append(p.grad)
                ms.append(state["exp_avg"])
                vs.append(state["exp_avg_sq"])
            if not ps:
                continue
            # all parameters of a group share one step count
            step = self.state[ps[0]]["step"]
            b1, b2 = group["betas"]
            adamw_step(ps, gs, ms, vs, step, lr=group["lr"], beta1=b1, beta2=b2, eps=group["eps"],
                       weight_decay=group["weight_decay"])
        return loss


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once ``patience`` epochs in a row fail to improve.

    An epoch improves when ``loss < best * (1 - threshold)``. After a
    reduction the counter restarts. The rate never drops below ``min_lr``.
    """

    lr: float
    factor: float = 0.1
    patience: int = 10
    threshold: float = 1e-4
    min_lr: float = 1e-6
    best: float = math.inf
    num_bad_epochs: int = 0

    def __post_init__(self):
        if not (0 < self.factor < 1) or self.patience < 1 or self.lr <= 0:
            raise ValueError("invalid plateau scheduler settings")

    def step(self, loss: float) -> float:
        if loss < self.best * (1 - self.threshold):
            self.best = loss
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
        if self.num_bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad_epochs = 0
        return self.lr

    def apply(self, optimizer):
        for group in optimizer.param_groups:
            group["lr"] = self.lr


def plateau_scheduler(state: PlateauScheduler, val_loss: float) -> float:
    return state.step(val_loss)

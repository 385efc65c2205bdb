"""Central finite-difference verification of autodiff gradients."""

from __future__ import annotations

import numpy as np
import torch


def _real_view(t):
    return torch.view_as_real(t) if torch.is_complex(t) else t


def gradient_check(fn, tensors, step=1e-5, seed=None) -> float:
    """Largest relative gradient error over ``tensors``.

    ``fn()`` must return a real tensor computed from ``tensors`` (64-bit
    leaves with ``requires_grad``). Non-scalar outputs are reduced with a
    fixed random projection drawn from ``seed``. Each tensor's error is
    ``max|g_auto - g_fd| / max(max|g_auto|, max|g_fd|, 1e-12)`` where the
    finite-difference step is ``step * max(1, |x|)``; real and imaginary
    parts of complex tensors are perturbed separately.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.dtype not in (torch.float64, torch.complex128):
            raise ValueError("gradient checks run in 64-bit precision")
    out = fn()
    # projection stream kept independent of any generator the caller seeds with ``seed``
    rng = np.random.default_rng([0 if seed is None else seed, 0x9C])
    proj = torch.from_numpy(rng.standard_normal(tuple(out.shape)))

    def objective():
        return (fn() * proj).sum()

    for t in tensors:
        t.grad = None
    objective().backward()
    worst = 0.0
    for t in tensors:
        auto = _real_view(t.grad if t.grad is not None else torch.zeros_like(t)).reshape(-1)
        flat = _real_view(t.data).reshape(-1)
        numeric = torch.empty_like(flat)
        with torch.no_grad():
            for i in range(flat.numel()):
                x0 = flat[i].item()
                h = step * max(1.0, abs(x0))
                flat[i] = x0 + h
                up = objective().item()
                flat[i] = x0 - h
                down = objective().item()
                flat[i] = x0
                numeric[i] = (up - down) / (2 * h)
        scale = max(auto.abs().max().item(), numeric.abs().max().item(), 1e-12)
        worst = max(worst, (auto - numeric).abs().max().item() / scale)
    return worst


def module_gradient_check(module, inputs, step=1e-5, seed=None) -> float:
    """Check a module's gradients with respect to its parameters and its inputs."""
    module = module.double()
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    params = [p for p in module.parameters() if p.requires_grad]
    return gradient_check(lambda: module(*inputs), inputs + params, step=step, seed=seed)


def standard_checks(seed: int = 0) -> dict[str, float]:
    """Gradient errors of every layer type and of toy-sized versions of the three networks."""
    from . import layers as L
    from .models import build_model
    from .train import masked_mse

    gen = torch.Generator().manual_seed(seed)

    def rnd(*shape, complex_=False):
        if complex_:
            t = torch.complex(torch.randn(*shape, generator=gen, dtype=torch.float64),
                              torch.randn(*shape, generator=gen, dtype=torch.float64))
        else:
            t = torch.randn(*shape, generator=gen, dtype=torch.float64)
        return t.requires_grad_(True)

    torch.manual_seed(seed)
    checks = {}
    x, w, b = rnd(2, 3, 6, 5), rnd(4, 3, 3, 3), rnd(4)
    checks["conv2d"] = gradient_check(lambda: L.conv2d(x, w, b), [x, w, b], seed=seed)
    wd = rnd(3, 1, 7, 7)
    checks["conv2d_depthwise"] = gradient_check(lambda: L.conv2d(x, wd, None, groups=3), [x, wd], seed=seed)
    ws = rnd(4, 3, 2, 2)
    checks["conv2d_strided"] = gradient_check(lambda: L.conv2d(x, ws, b, 2, 0), [x, ws, b], seed=seed)
    wt = rnd(3, 4, 2, 2)
    checks["conv_transpose2d"] = gradient_check(lambda: L.conv_transpose2d(x, wt, b), [x, wt, b], seed=seed)
    xc = rnd(2, 3, 6, 5, complex_=True)
    wr, wi, br, bi = rnd(4, 3, 3, 3), rnd(4, 3, 3, 3), rnd(4), rnd(4)

    def real_out(f):
        return lambda: torch.view_as_real(f())

    checks["conv2d_complex"] = gradient_check(
        real_out(lambda: L.conv2d_complex(xc, wr, wi, br, bi)), [xc, wr, wi, br, bi], seed=seed)
    wtr, wti = rnd(3, 4, 2, 2), rnd(3, 4, 2, 2)
    checks["conv_transpose2d_complex"] = gradient_check(
        real_out(lambda: L.conv_transpose2d_complex(xc, wtr, wti, br, bi)), [xc, wtr, wti, br, bi], seed=seed)
    checks["crelu"] = gradient_check(real_out(lambda: L.crelu(xc)), [xc], seed=seed)
    checks["relu"] = gradient_check(lambda: torch.relu(x), [x], seed=seed)
    checks["gelu"] = gradient_check(lambda: torch.nn.functional.gelu(x), [x], seed=seed)
    xp = rnd(2, 3, 6, 4)
    checks["maxpool2x2"] = gradient_check(lambda: L.maxpool2x2(xp), [xp], seed=seed)
    xpc = rnd(2, 3, 6, 4, complex_=True)
    checks["complex_maxpool2x2"] = gradient_check(real_out(lambda: L.complex_maxpool2x2(xpc)), [xpc], seed=seed)
    checks["batchnorm"] = module_gradient_check(L.BatchNorm2d(3), [x], seed=seed)
    cbn = L.ComplexBatchNorm2d(3).double()
    with torch.no_grad():
        cbn.weight.add_(0.1 * torch.randn(cbn.weight.shape, generator=gen, dtype=torch.float64))
    checks["complex_batchnorm"] = gradient_check(
        real_out(lambda: cbn(xc)), [xc] + list(cbn.parameters()), seed=seed)
    checks["layernorm2d"] = module_gradient_check(L.LayerNorm2d(3), [x], seed=seed)
    skip = rnd(2, 2, 5, 4)
    checks["concat_skip"] = gradient_check(lambda: L.concat_skip(x, skip), [x, skip], seed=seed)
    xb = rnd(2, 4, 6, 5)
    checks["convnext_block"] = module_gradient_check(L.ConvNeXtBlock(4), [xb], seed=seed)
    pred, target = rnd(2, 1, 4, 4), rnd(2, 1, 4, 4)
    mask = torch.rand(2, 1, 4, 4, generator=gen) > 0.5
    checks["masked_mse"] = gradient_check(lambda: masked_mse(pred, target, mask), [pred, target], seed=seed)
    checks["real_unet"] = module_gradient_check(build_model("real_unet", 1, widths=(2, 3, 4)), [x[:, :2, :4, :4].detach().repeat(1, 1, 2, 2)], seed=seed)
    checks["complex_unet"] = module_gradient_check(
        build_model("complex_unet", 1, widths=(2, 3, 4)), [xc[:, :1, :4, :4].detach().repeat(1, 1, 2, 2)], seed=seed)
    xn = rnd(2, 2, 16, 8)
    checks["convnext_unet"] = module_gradient_check(
        build_model("convnext_unet", 1, widths=(4, 5, 6, 7), depths=(1, 1, 1, 1)), [xn], seed=seed)
    return checks

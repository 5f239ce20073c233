"""Property checks of the diffusion machinery for an arbitrary schedule.

Used by ``sweep-t`` to confirm each swept step count is well formed.
"""

from __future__ import annotations

from typing import Dict

import numpy as np
import torch

from . import schedule as sch
from .denoiser import Denoiser, DenoiserConfig, sample_ipr


def marginal_check(s: sch.NoiseSchedule, n: int, seed: int, dim: int = 4, n_se: float = 4.0) -> bool:
    """Iterated single steps vs the closed-form marginal at every t, within
    ``n_se`` Monte-Carlo standard errors for mean and variance."""
    gen = torch.Generator().manual_seed(seed)
    z0 = torch.linspace(-1.5, 1.5, dim, dtype=torch.float64)
    state = sch.IPRVector(z0.expand(n, dim).clone(), 0)
    for t in range(1, s.T + 1):
        eps = torch.randn((n, dim), generator=gen, dtype=torch.float64)
        state = sch.diffuse_step(s, state, t, eps)
        ab = s.alpha_bar(t)
        mean_true, var_true = ab**0.5 * z0.numpy(), 1.0 - ab
        x = state.values.numpy()
        se_mean = np.sqrt(var_true / n)
        # Var of the sample variance for Gaussian data: 2 sigma^4 / (n - 1)
        se_var = var_true * np.sqrt(2.0 / (n - 1))
        if np.any(np.abs(x.mean(0) - mean_true) > n_se * se_mean):
            return False
        if np.any(np.abs(x.var(0, ddof=1) - var_true) > n_se * se_var):
            return False
    return True


def run_invariants(s: sch.NoiseSchedule, seed: int = 0, n_mc: int = 20000) -> Dict[str, bool]:
    res = {}
    b = s.betas
    res["betas_in_unit_interval"] = bool(np.all((b > 0) & (b < 1)))
    res["betas_increasing"] = bool(np.all(np.diff(b) > 0))
    res["alphas_exact"] = bool(np.all(s.alphas == 1.0 - b))
    res["alpha_bars_recursive"] = bool(
        s.alpha_bars[0] == s.alphas[0]
        and np.all(s.alpha_bars[1:] == s.alpha_bars[:-1] * s.alphas[1:])
    )
    res["alpha_bars_decreasing"] = bool(np.all(np.diff(s.alpha_bars) < 0))
    res["posterior_var_first_zero"] = bool(s.posterior_vars[0] == 0.0)
    res["marginals"] = marginal_check(s, n_mc, seed)

    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(8, dtype=torch.float64, generator=gen)
    eps = torch.randn(8, dtype=torch.float64, generator=gen)
    z1 = sch.diffuse_to(s, sch.IPRVector(z, 0), 1, eps)
    back = sch.reverse_step(s, z1, 1, eps).values
    res["one_step_inversion"] = bool(torch.linalg.norm(back - z) <= 1e-10 * torch.linalg.norm(z))

    zt = sch.IPRVector(torch.randn(8, dtype=torch.float64, generator=gen), s.T)
    eh = torch.randn(8, dtype=torch.float64, generator=gen)
    a = sch.reverse_step(s, zt, s.T, eh).values
    c = sch.reverse_step(s, zt, s.T, eh).values
    res["reverse_step_pure"] = bool(torch.equal(a, c))

    torch.manual_seed(seed)
    net = Denoiser(DenoiserConfig(ipr_dim=8, hidden_width=16, num_layers=1), s.T).double()
    cond = lambda lq: torch.zeros((lq.shape[0], 8), dtype=torch.float64)  # noqa: E731
    lq = torch.zeros((1, 3, 8, 8), dtype=torch.float64)
    out1 = sample_ipr(net, cond, s, lq, torch.Generator().manual_seed(seed))
    calls = net.calls
    out2 = sample_ipr(net, cond, s, lq, torch.Generator().manual_seed(seed))
    res["denoiser_called_T_times"] = calls == s.T
    res["sampling_reproducible"] = bool(torch.equal(out1.values, out2.values)) and out1.timestep == 0
    return res

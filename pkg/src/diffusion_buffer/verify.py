"""Oracle verification suite: every check compares an implementation against an
independent reference and reports pass/fail under the implementation's name."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.integrate import quad

from . import sde as sde_mod
from .dbuffer import BufferState, linear_grid, sample_training_grid, stream_step
from .oracles import central_difference, offline_replay, quad_sigma, rk4_mean_coeffs
from .score import AnalyticScore, GaussianStats, GaussianToy, NetConfig, ScoreNet, analytic_score
from .sde import BBED_PAPER, OUVE_PAPER, complex_normal, mean_coeffs, sample_state
from .train import batch_loss
from .dbuffer import make_training_batch


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def moment_grid(params, n=100):
    return np.linspace(params.t_rev / n, params.t_rev, n)


def check_mean_coeffs(params_list=(OUVE_PAPER, BBED_PAPER), tol=1e-8):
    worst = 0.0
    for p in params_list:
        ts = moment_grid(p)
        a, b = mean_coeffs(p, ts)
        ra, rb = rk4_mean_coeffs(p, ts)
        worst = max(worst, np.max(np.abs(a - ra) / np.abs(ra)), np.max(np.abs(b - rb) / np.abs(rb)))
    return CheckResult("sde.mean_coeffs", bool(worst < tol), f"max rel err vs RK4 {worst:.2e} (tol {tol:g})")


def check_sigma(params_list=(OUVE_PAPER, BBED_PAPER), tol=1e-6, sigma_fn=None):
    sigma_fn = sigma_fn or sde_mod.sigma
    worst = 0.0
    for p in params_list:
        ts = moment_grid(p)
        ref = quad_sigma(p, ts)
        worst = max(worst, float(np.max(np.abs(sigma_fn(p, ts) - ref) / ref)))
    return CheckResult("sde.sigma", bool(worst < tol), f"max rel err vs quadrature {worst:.2e} (tol {tol:g})")


def check_sample_state(params=BBED_PAPER, draws=100_000, n_times=10, seed=0, sigma_fn=None):
    """Empirical mean and variance of X_t against 3-standard-error bands."""
    sigma_fn = sigma_fn or sde_mod.sigma
    rng = np.random.default_rng(seed)
    x0, y = 0.3 - 0.1j, -0.2 + 0.25j
    ok = True
    worst = 0.0
    for t in np.linspace(params.t_eps, params.t_rev, n_times):
        xs = sample_state(params, np.full(draws, x0), np.full(draws, y), t, rng)
        a, b = mean_coeffs(params, t)
        mu = a * x0 + b * y
        s2 = float(sigma_fn(params, t)) ** 2
        se_mean = math.sqrt(s2 / 2 / draws)  # per real component
        dev = max(abs(xs.mean().real - mu.real), abs(xs.mean().imag - mu.imag)) / se_mean
        var = np.mean(np.abs(xs - xs.mean()) ** 2)
        # |X - mu|^2 ~ s2 * Exp(1): standard error of the mean is s2 / sqrt(n)
        dev_var = abs(var - s2) / (s2 / math.sqrt(draws))
        worst = max(worst, dev, dev_var)
        ok &= dev < 3 and dev_var < 3
    return CheckResult("sde.sample_state", bool(ok), f"worst deviation {worst:.2f} standard errors (band 3)")


def check_stream_replay(params=BBED_PAPER, steps=500, F=6, K=24, B=8, seed=0):
    toy = GaussianToy(0.001, 0.005)
    score = AnalyticScore(params, toy)
    grid = linear_grid(params, B)
    _, noisy = toy.sample(np.random.default_rng(seed + 1), (F, steps))
    state = BufferState.cold(F, K, grid)
    rng = np.random.default_rng(seed)
    outs = []
    for n in range(steps):
        state, out = stream_step(state, noisy[:, n], score, params, rng)
        outs.append(out)
    ref_outs, ref_window = offline_replay(noisy, score, params, grid, K, np.random.default_rng(seed))
    same = all(np.array_equal(a, b) for a, b in zip(outs, ref_outs)) and np.array_equal(state.v, ref_window)
    return CheckResult("dbuffer.stream_step", bool(same),
                       f"{steps} steps {'bit-identical to' if same else 'DIFFER from'} offline replay")


def _brute_log_density(params, m, v, y, t, x):
    """log p_t(x | y) by 1-D quadrature of each real component of the kernel against the prior."""
    a, b = mean_coeffs(params, t)
    s2 = float(sde_mod.sigma(params, t)) ** 2
    total = 0.0
    for comp in (np.real, np.imag):
        mc, yc, xc = float(comp(m)), float(comp(y)), float(comp(x))
        sd = math.sqrt(v / 2)

        def integrand(u):
            mean = a * u + b * yc
            return (math.exp(-(xc - mean) ** 2 / s2) / math.sqrt(math.pi * s2)
                    * math.exp(-(u - mc) ** 2 / v) / math.sqrt(math.pi * v))

        val, _ = quad(integrand, mc - 12 * sd, mc + 12 * sd, epsabs=0, epsrel=1e-13, limit=400,
                      points=[mc, (xc - b * yc) / a])
        total += math.log(val)
    return total


def check_analytic_score(params=BBED_PAPER, trials=5, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m = complex(*rng.normal(0, 0.1, 2))
        v = float(rng.uniform(0.002, 0.02))
        y = complex(*rng.normal(0, 0.1, 2))
        t = float(rng.uniform(params.t_eps, params.t_rev))
        x = complex(*rng.normal(0, 0.1, 2))
        s = analytic_score(params, GaussianStats(np.array([[m]]), v), np.array([[x]]), np.array([[y]]), [t])[0, 0]
        h = 1e-4
        gr = central_difference(lambda u: _brute_log_density(params, m, v, y, t, complex(u, x.imag)), x.real, h)
        gi = central_difference(lambda u: _brute_log_density(params, m, v, y, t, complex(x.real, u)), x.imag, h)
        # score convention: half the real gradient, i.e. d/d(conj x)
        ref = 0.5 * complex(gr, gi)
        worst = max(worst, abs(s - ref) / abs(ref))
    return CheckResult("score.analytic_score", bool(worst < tol),
                       f"max rel err vs quadrature + finite differences {worst:.2e} (tol {tol:g})")


def _small_problem(seed=0, params=BBED_PAPER):
    torch.manual_seed(seed)
    net = ScoreNet(NetConfig(channels=4, depth=1, emb_features=2), params).double()
    rng = np.random.default_rng(seed)
    F, K, B = 8, 12, 4
    pairs = []
    for _ in range(3):
        x0 = 0.1 * complex_normal(rng, (F, 10))
        pairs.append((x0, x0 + 0.05 * complex_normal(rng, (F, 10))))
    batch = make_training_batch(pairs, K, B, params, rng)
    return net, batch


def gradient_check(net, batch, coords=50, h=1e-3, seed=0):
    """Max relative error between autograd and central differences of the loss."""
    net.zero_grad()
    loss = batch_loss(net, batch)
    loss.backward()
    params = [(n, p) for n, p in net.named_parameters()]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(coords):
        name, p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        g = float(p.grad[idx])
        orig = float(p.data[idx])

        def f(val):
            with torch.no_grad():
                p.data[idx] = val
                out = float(batch_loss(net, batch))
                p.data[idx] = orig
            return out

        fd = central_difference(f, orig, h)
        scale = max(abs(g), abs(fd))
        if scale == 0:
            continue
        worst = max(worst, abs(g - fd) / scale)
    return worst


def check_loss_gradient(seed=0, tol=1e-4):
    net, batch = _small_problem(seed)
    worst = gradient_check(net, batch, seed=seed)
    return CheckResult("train.dsm_loss_grad", bool(worst < tol),
                       f"{net.num_params()} params, max rel err on 50 coords {worst:.2e} (tol {tol:g})")


def check_training_grid(seed=0, draws=100_000):
    from scipy.stats import kstest

    rng = np.random.default_rng(seed)
    p = BBED_PAPER
    u = np.array([sample_training_grid(2, p.t_eps, p.t_rev, rng).steps[1] for _ in range(draws)])
    stat = kstest(u, "uniform", args=(p.t_eps, p.t_rev - p.t_eps)).statistic
    return CheckResult("dbuffer.sample_training_grid", bool(stat < 0.01), f"KS statistic {stat:.4f} (tol 0.01)")


def run_verification(seed: int = 0, sigma_fn=None):
    """Run every oracle check; ``sigma_fn`` overrides ``sde.sigma`` for fault injection."""
    return [
        check_mean_coeffs(),
        check_sigma(sigma_fn=sigma_fn),
        check_sample_state(seed=seed, sigma_fn=sigma_fn),
        check_training_grid(seed=seed),
        check_stream_replay(seed=seed),
        check_analytic_score(seed=seed),
        check_loss_gradient(seed=seed),
    ]

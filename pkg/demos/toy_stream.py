"""Stream a Gaussian toy problem through the diffusion buffer with the exact score.

For a CN(0, prior_var) clean signal plus CN(0, noise_var) noise the score is known
in closed form, so the printout shows what the buffer itself contributes: larger
buffers give lower error at the price of B frames of delay.

    python demos/toy_stream.py
"""
import numpy as np

from diffusion_buffer.dbuffer import enhance_stream, linear_grid
from diffusion_buffer.score import AnalyticScore, GaussianToy
from diffusion_buffer.sde import BBED_PAPER, OUVE_PAPER

toy = GaussianToy(prior_var=0.001, noise_var=0.005)
rng = np.random.default_rng(0)
x0, y = toy.sample(rng, (500, 120))
print(f"noisy MSE        {np.mean(abs(y - x0) ** 2):.5f}")
print(f"posterior mean   {np.mean(abs(toy.gain * y - x0) ** 2):.5f}")
# an exact posterior sample has twice the posterior variance as its error
print(f"posterior sample {2 * toy.gain * toy.noise_var:.5f}")

for params in (BBED_PAPER, OUVE_PAPER):
    for B in (5, 20, 60):
        out = enhance_stream(y, AnalyticScore(params, toy), params, linear_grid(params, B), 64,
                             np.random.default_rng(B), flush=True)
        mse = np.mean(abs(out.data[:, B:] - x0) ** 2)
        print(f"{params.kind} B={B:<3d}      {mse:.5f}   latency {B * 16} ms")

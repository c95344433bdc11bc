"""Noise-free data: how the D-step size rule changes tracking.

The spectral rule divides exp(nu) by the largest curvature eigenvalue; the
logdet rule divides by their geometric mean and takes much larger steps.

Run: python demos/step_rules.py
"""
import numpy as np

from odem import NoiseSpec, OdemConfig, glv_model, mse, run_odem, simulate_dataset

quiet = NoiseSpec(white_std=0.0)
ds = simulate_dataset(T=10.0, state_noise=quiet, obs_noise=quiet)
burn = ds.n_steps // 10

for rule in ("spectral", "logdet"):
    for k_x in (2, 3):
        cfg = OdemConfig(k_x=k_x, C=100.0, step_rule=rule)
        rec = run_odem(ds, cfg, glv_model())
        err = mse(ds.true_states, rec.positions(), burn)
        print(f"{rule:8s} k_x={k_x}  median ds={np.median(rec.step_size):.3g}  MSE={err:.2e}")

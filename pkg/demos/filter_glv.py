"""Simulate GLV data, filter it with both model families and compare.

Run: python demos/filter_glv.py
"""
import numpy as np

from odem import OdemConfig, glv_model, lorenz_model, mse, run_odem, simulate_dataset

ds = simulate_dataset(T=20.0)
print(f"{ds.n_steps} observations, dt={ds.dt}")

burn = ds.n_steps // 10
for model in (glv_model(), lorenz_model()):
    for k_x in (2, 3):
        cfg = OdemConfig(k_x=k_x, C=1.0, inter_em=128)
        rec = run_odem(ds, cfg, model)
        err = mse(ds.true_states, rec.positions(), burn)
        theta = np.array2string(rec.mu_theta[-1], precision=3)
        print(f"{model.family.value:7s} k_x={k_x}  FA={rec.final_fa:12.5g}  MSE={err:.4f}  theta={theta}")

"""Desk-sized tuning sweep, free-action selection and report tables.

Run: python demos/sweep_and_select.py [out_dir]
"""
import sys

from odem import SweepGrid, glv_model, report, select_best, simulate_dataset, sweep

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
ds = simulate_dataset(T=20.0)
table = sweep(ds, glv_model(), SweepGrid.desk(), out_dir=out)
print(f"{sum(r['status'] == 'ok' for r in table.rows)}/{len(table.rows)} configurations ran")

sels = {}
for k_x in (2, 3):
    for C in (0.1, 1.0, 10.0):
        row, rec = select_best(table, k_x, C)
        sels[(k_x, C)] = (row, rec)
        cfg = row["config"]
        print(f"k_x={k_x} C={C:<4}  inter_em={cfg['inter_em']:<4} beta={cfg['beta_lambda']:<4}"
              f"  FA={row['fa']:.5g}  MSE={row['mse']:.4f}")

paths = report(sels, f"{out}/report", ds)
print(f"wrote {len(paths)} tables under {out}/report")

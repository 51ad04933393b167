"""Small success-rate grid through the command-line machinery.

Writes the per-cell and aggregated CSV tables that larger studies use to map
success rate against noise level and data length.
"""

from pathlib import Path

from odrsindy.cli import cmd_benchmark

out = Path("benchmark_demo_out")
config = {
    "system": "vanderpol",
    "dt": 0.02,
    "library": {"poly_order": 3},
    "fd_order": 4,
    "selection": {"n_bootstrap": 30, "n_multistart": 2},
    "grid": {
        "noise_levels": [0.05, 0.1],
        "T_values": [8.0],
        "seeds": [0, 1, 2],
    },
}
rows = cmd_benchmark(config, out)
print(f"wrote {out}/benchmark_results.csv and {out}/benchmark_summary.csv")
print(f"{'noise':>6} {'T':>5} {'seed':>4} {'ok':>3} {'param_err':>10} {'secs':>6}")
for r in rows:
    print(f"{r['noise_level']:6.2f} {r['T']:5.1f} {r['seed']:4d} {r['success']:3d} "
          f"{r['param_error']:10.4f} {r['wall_time_s']:6.1f}")
print((out / "benchmark_summary.csv").read_text())

"""Weak error of the Husimi function against a particle solution, 1D ladder.

A field-free, one-dimensional version of the hbar sweep that finishes in
well under a minute. The aggregate weak error should shrink as hbar does.

    python demos/small_sweep.py
"""

from paulilab.limitlab import SweepConfig, run_hbar_sweep


def main() -> None:
    cfg = SweepConfig(
        hbars=(0.4, 0.2, 0.1), d=1, L=10.0, preset="zero", preset_params={},
        x_mean=(0.0,), x_std=(0.5,), p_mean=(0.5,), p_std=(0.5,), T=0.5, dt0=0.05,
        n_particles=20_000, kinetic_dt=0.02, kinetic_n=32, battery_count=4, battery_widths=(0.5,),
    )
    report = run_hbar_sweep(cfg, "linear")
    for row in report.rows:
        print(f"hbar={row['hbar']:<6}  grid={row['n']:<4}  weak error={row['aggregate']:.4e}")
    print("fitted order:", report.summary.get("order"))
    print("monotone:", report.summary.get("monotone"))


if __name__ == "__main__":
    main()

"""Sweep eps1 and sigma1 of the layered resistor and compare AVM with the closed form.

    python3 scripts/layered_sweep.py --n-main 800 --out results/layered_sweep.csv
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from eqsadj.scenarios import scenario_layered_resistor


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-main", type=int, default=800)
    ap.add_argument("--points", type=int, default=9, help="values per decade sweep")
    ap.add_argument("--out", default="results/layered_sweep.csv")
    args = ap.parse_args()

    sweeps = {"eps1": np.logspace(0, 3, args.points), "sigma1": np.logspace(0, 3, args.points)}
    rows = []
    for name, values in sweeps.items():
        for v in values:
            sc = scenario_layered_resistor(n_main=args.n_main, **{name: float(v)})
            res, _ = sc.sensitivities()
            for q in ("phi_ref", "W_el"):
                avm = res.get(q, name)
                exact = sc.analytic_value(q, name)
                rows.append([name, v, q, avm, exact, abs(avm - exact) / abs(exact)])
                print(f"{name}={v:10.4g}  d{q}/d{name}: avm {avm: .6e}  exact {exact: .6e}  "
                      f"rel.err {rows[-1][-1]:.2e}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value", "qoi", "avm", "analytic", "rel_error"])
        w.writerows(rows)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

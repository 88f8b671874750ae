"""L2 convergence of the u-solve against a manufactured quadratic solution.

    python3 scripts/convergence_study.py [--sizes 8 16 32 64]
"""

import argparse
from pathlib import Path

from linfmisfit import config as C
from linfmisfit.cli import convergence_study
from linfmisfit.expr import parse_vector

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "forward_manufactured.json"))
    ap.add_argument("--sizes", type=int, nargs="+", default=None)
    args = ap.parse_args()
    cfg = C.load(args.config)
    res = convergence_study(cfg, parse_vector(cfg.forward.exact_u), args.sizes or cfg.forward.sizes)
    print(f"{'n':>5} {'h':>10} {'L2 error':>12} {'rate':>6}")
    for r in res["rows"]:
        rate = "" if r["rate"] is None else f"{r['rate']:.3f}"
        print(f"{r['n']:5d} {r['h']:10.4g} {r['l2_error']:12.5g} {rate:>6}")
    print("passed" if res["passed"] else "FAILED", f"(min rate {res['min_rate']:.3f})")

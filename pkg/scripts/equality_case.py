"""Both sides of the entropy inequality on the hyperbolic half-plane, where they coincide.

    python3 scripts/equality_case.py --samples 8 --T 200
"""

import argparse
import json
import time

from jacobi_entropy.entropy import EntropyConfig, entropy_report
from jacobi_entropy.systems import geodesic2d, hyperbolic_metric, level_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--T", type=float, default=200.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--energy", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=17)
    args = ap.parse_args()

    ls = level_set(geodesic2d(hyperbolic_metric()), args.energy, q_bounds=((-1.0, 1.0), (0.5, 2.0)))
    cfg = EntropyConfig(T=args.T, dt=args.dt, transient=min(10.0, args.T / 4))
    t0 = time.perf_counter()
    rep = entropy_report(ls, args.samples, args.seed, cfg, rprime_count=min(2, args.samples))
    out = rep.as_dict()
    out["runtime_s"] = time.perf_counter() - t0
    out["expected"] = (2 * args.energy) ** 0.5
    print(json.dumps(out, indent=2, default=str))


if __name__ == "__main__":
    main()

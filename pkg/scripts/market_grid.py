"""Sweep task scatter and shortlist size for the generic and role markets.

Prints mean Spearman checkpoints for the generic market and last-20-epoch
call shares for the role market, one line per grid point.
"""

import argparse
import itertools
import time

import numpy as np

from coordkernel.dispatch import canonical_model
from coordkernel.simharness.economy import Economy, EconomyParams
from coordkernel.substrate import Archetype


def generic(params: EconomyParams, seeds, model) -> str:
    curves = []
    for s in seeds:
        res = Economy(params, s, model).run()
        curves.append([np.nan if v is None else v for v in res.spearman])
    mean = np.nanmean(np.array(curves, dtype=float), axis=0)
    marks = [m for m in (50, 100, 200, 300, 500) if m <= len(mean)]
    return " ".join(f"e{m}={mean[m - 1]:.3f}" for m in marks)


def roles(params: EconomyParams, seeds, model) -> str:
    arch = (Archetype.EXCELLENT,) * 5 + (Archetype.MEDIOCRE,) * 5 + (Archetype.MALICIOUS,) * 5
    p = EconomyParams(**{**params.__dict__, "n_agents": len(arch), "archetypes": arch})
    shares = {a: [] for a in (Archetype.EXCELLENT, Archetype.MALICIOUS)}
    for s in seeds:
        res = Economy(p, s, model).run()
        for a in shares:
            members = [x for x in res.agent_ids if res.archetypes[x] is a]
            shares[a].append(res.call_share(members, slice(-20, None)))
    return " ".join(f"{a.value}={np.mean(v):.3f}" for a, v in shares.items())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--market", choices=("generic", "roles"), default="generic")
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.3, 0.4, 0.5, 0.6])
    ap.add_argument("--k", type=int, nargs="+", default=[3, 4, 5])
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 2, 4, 6])
    args = ap.parse_args()
    model = canonical_model()
    run = generic if args.market == "generic" else roles
    for sigma, k in itertools.product(args.sigma, args.k):
        t0 = time.perf_counter()
        params = EconomyParams(epochs=args.epochs, task_sigma=sigma, k_recruit=k)
        line = run(params, args.seeds, model)
        print(f"task_sigma={sigma} k_recruit={k}: {line} ({time.perf_counter() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()

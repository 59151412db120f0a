#!/usr/bin/env python3
"""Convergence rate studies on the unit square and the unit torus.

The Dirichlet study compares perforated solves against their homogenized
companions plus the two-scale correction; the resolvent study does the same
for lam u - div A(x/eps, grad u) = F with periodic boundary conditions.
Both print the fitted log-log slopes at the end.
"""

import argparse
import json
from pathlib import Path

from perfhom.labcli import load_config, run_campaign

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="output root directory")
    args = ap.parse_args()
    for name in ("rate_dirichlet", "resolvent_torus"):
        overrides = None
        if args.out is not None:
            overrides = {"out": str(Path(args.out) / name)}
        cfg = load_config(ROOT / "configs" / f"{name}.json", overrides)
        summary = run_campaign(cfg)
        rates = summary.get("rates", {})
        pretty = ", ".join(f"{k} {v:.3f}" for k, v in sorted(rates.items()))
        print(f"{cfg.kind}: slopes {pretty} (out={cfg.out})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

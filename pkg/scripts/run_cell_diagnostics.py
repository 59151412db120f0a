#!/usr/bin/env python3
"""Cell-level diagnostics for the paper-example operator.

Runs the structure audit, tabulates the effective operator on the default
perforated cell, and computes flux correctors at a few gradients.  Outputs
land under out/ next to this repository unless --out points elsewhere.
"""

import argparse
import json
from pathlib import Path

from perfhom.labcli import load_config, run_campaign

ROOT = Path(__file__).resolve().parents[1]
CAMPAIGNS = ("audit_paper", "effective_paper", "flux_paper")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="output root directory")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    for name in CAMPAIGNS:
        overrides = {"seed": args.seed}
        if args.out is not None:
            overrides["out"] = str(Path(args.out) / name)
        cfg = load_config(ROOT / "configs" / f"{name}.json", overrides)
        summary = run_campaign(cfg)
        report = json.loads((Path(cfg.out) / "report.json").read_text())
        wall = sum(report["wall_times_s"].values())
        extra = f" {json.dumps(summary)}" if summary else ""
        print(f"{cfg.kind}: {wall:.1f}s out={cfg.out}{extra}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

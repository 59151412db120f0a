#!/usr/bin/env python3
"""Large-scale regularity and extension measurements on the default geometry.

Covers the interior and boundary Lipschitz profiles, the quenched CZ ratio
check for smooth and oscillatory data, and the extension operator audit.
"""

import argparse
import json
from pathlib import Path

from perfhom.labcli import load_config, run_campaign

ROOT = Path(__file__).resolve().parents[1]
CAMPAIGNS = ("lipschitz_identity", "cz_identity", "extension_suite")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="output root directory")
    args = ap.parse_args()
    for name in CAMPAIGNS:
        overrides = None
        if args.out is not None:
            overrides = {"out": str(Path(args.out) / name)}
        cfg = load_config(ROOT / "configs" / f"{name}.json", overrides)
        summary = run_campaign(cfg)
        extra = f" {json.dumps(summary)}" if summary else ""
        print(f"{cfg.kind}: ok out={cfg.out}{extra}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Run the figure-reproduction plans and print their summaries.

    python3 scripts/run_figures.py                      # every plan, desk scale
    python3 scripts/run_figures.py fig4_architecture    # one plan
    python3 scripts/run_figures.py --episodes 400 --slots 200 --workers 8   # full scale
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from starhop.cli import main as cli_main

PLANS = Path(__file__).resolve().parent / "plans"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("plans", nargs="*", help="plan names (default: all)")
    ap.add_argument("--out", default="results", help="parent output directory")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--slots", type=int)
    ap.add_argument("--seeds", type=int, help="use seeds 0..n-1")
    args = ap.parse_args()

    names = args.plans or sorted(p.stem for p in PLANS.glob("*.json"))
    status = 0
    for name in names:
        plan = json.loads((PLANS / f"{name}.json").read_text())
        for key in ("episodes", "slots"):
            if getattr(args, key) is not None:
                plan["hyper"][key] = getattr(args, key)
        if args.seeds is not None:
            plan["seeds"] = list(range(args.seeds))
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
            json.dump(plan, fh)
        print(f"== {name}", flush=True)
        code = cli_main(["run", "--plan", fh.name, "--out", str(Path(args.out) / name),
                         "--workers", str(args.workers)])
        Path(fh.name).unlink()
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())

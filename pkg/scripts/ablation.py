"""Eight-row propagation ablation averaged over seeded reference scenes.

    python3 scripts/ablation.py --seeds 5
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from bboxprop.evaluation import ablation_text
from bboxprop.experiments import ReferenceConfig, mean_rows, reference_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--preset", default="night", choices=["night", "day"])
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    cfg = replace(ReferenceConfig(), preset=args.preset)
    rows = mean_rows(reference_ablation(range(args.seeds), cfg))
    print(ablation_text(rows), end="")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()

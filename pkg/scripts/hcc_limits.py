"""Sweep the HCC confidence threshold and attempt limits on the night reference scenes.

    python3 scripts/hcc_limits.py --seeds 3
"""

import argparse
from itertools import product

from bboxprop.evaluation import evaluate
from bboxprop.experiments import reference_case
from bboxprop.pipeline import run_pipeline
from bboxprop.propagation import PropagationConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.6, 0.7, 0.8, 0.9])
    ap.add_argument("--limits", type=int, nargs="+", default=[1, 3, 5])
    args = ap.parse_args()

    cases = [reference_case(s) for s in range(args.seeds)]
    print(f"{'thr':>5} {'exist':>5} {'fail':>5} {'AP50':>7} {'MOTA':>7}")
    for thr, le, lf in product(args.thresholds, args.limits, args.limits):
        cfg = PropagationConfig(hcc_threshold=thr, attempt_limit_existing=le, attempt_limit_failure=lf)
        aps, motas = [], []
        for c in cases:
            res = run_pipeline(c.dets, c.spec, c.cfg.n_frames, c.cfg.segment_size, cfg, c.validator())
            rep = evaluate(res.moving, c.gt, c.spec)
            aps.append(rep.ap50_overall)
            motas.append(rep.mota)
        print(f"{thr:5.2f} {le:5d} {lf:5d} {sum(aps) / len(aps):7.3f} {sum(motas) / len(motas):7.3f}")


if __name__ == "__main__":
    main()

"""Equal vs shared vs input-dependent weights on the synthetic benchmark.

For each K the same local fits and component GPs are scored under equal
weights, optimised shared weights and (optionally) softmax-linear
input-dependent weights; the relative lifts go to a CSV.

    python scripts/weight_ablation.py --out results/ --input-dependent
"""

import argparse
import csv
import json
import warnings
from pathlib import Path

from ggmp import FitConfig
from ggmp.cli import ABLATION_HEADER, run_ablation
from ggmp.dataset import split_train_test
from ggmp.synthgen import SyntheticField, make_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("."))
    ap.add_argument("--ks", type=int, nargs="+", default=[3, 5, 10, 25])
    ap.add_argument("--input-dependent", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    warnings.simplefilter("ignore", RuntimeWarning)

    ds = make_dataset(SyntheticField(seed=args.seed), T=2000, seed=args.seed, with_truth=False)
    train, _ = split_train_test(ds, 0.2, seed=args.seed)
    cfg = FitConfig(seed=args.seed)
    rows = run_ablation(train, args.ks, cfg, args.input_dependent)
    header = [h for h in ABLATION_HEADER if args.input_dependent or "input" not in h]
    path = args.out / "weight_ablation.csv"
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r["K"]] + [f"{r[h]:.17g}" for h in header[1:]])
            print("  ".join(f"{h}={r[h]:.4f}" if h != "K" else f"K={r['K']}" for h in header))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()

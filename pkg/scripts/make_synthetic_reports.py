"""Write a synthetic report CSV for the 40-day benchmark period.

Per-day totals and leading states follow the bundled benchmark table;
positions and times are random but reproducible for a given seed.

    python3 scripts/make_synthetic_reports.py --out work/reports.csv --seed 2025
"""

import argparse
from collections import Counter

from tornadoverif.synthetic import synthetic_reports, write_synthetic_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="work/reports.csv")
    ap.add_argument("--seed", type=int, default=2025)
    args = ap.parse_args()
    path = write_synthetic_reports(args.out, seed=args.seed)
    per_day = Counter(r["time_utc"][:10] for r in synthetic_reports(seed=args.seed))
    print(f"wrote {sum(per_day.values())} reports over {len(per_day)} report days to {path}")


if __name__ == "__main__":
    main()

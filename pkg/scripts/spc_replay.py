"""Summarize the SPC baseline from the bundled daily score table.

Prints the aggregate score, hallucination rates and bootstrap intervals for
several seeds, so the interval's seed sensitivity is visible at a glance.

    python3 scripts/spc_replay.py --iterations 1000 --seeds 0 1 2 3 4
"""

import argparse

from tornadoverif.scoring import format_summary, spc_outcomes, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--presence-days", action="store_true",
                    help="score absent predictions as missing instead of zero (no effect for SPC)")
    args = ap.parse_args()
    outcomes = spc_outcomes()
    for k, seed in enumerate(args.seeds):
        s = summarize(outcomes, args.iterations, seed, absent_as_zero=not args.presence_days)
        text = format_summary(s, f"SPC/seed{seed}")
        print(text if k == 0 else text.splitlines()[1])


if __name__ == "__main__":
    main()

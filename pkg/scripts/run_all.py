"""Run every config in configs/ and write the tables under results/.

    python3 scripts/run_all.py [--threads N] [name ...]
"""
import argparse
import sys
import time
from pathlib import Path

from ionsim.cli import ExperimentConfig, emit, run

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="config stems to run (default: all)")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    paths = sorted((ROOT / "configs").glob("*.json"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    worst = 0
    for path in paths:
        config = ExperimentConfig.load(path)
        t0 = time.perf_counter()
        table = run(config, args.threads)
        out = ROOT / (config.output.path or f"results/{path.stem}.{config.output.format}")
        emit(table, config.output.format, out)
        print(f"{path.stem:24s} {len(table.rows):5d} rows  {table.failed} failed  "
              f"{time.perf_counter() - t0:6.1f} s  -> {out.relative_to(ROOT)}")
        worst = max(worst, 2 if table.failed else 0)
    return worst


if __name__ == "__main__":
    sys.exit(main())

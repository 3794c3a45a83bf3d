"""Time the full pipeline on a generated n + n instance and report per-process peak memory.

    python scripts/scale_benchmark.py --out /tmp/bench --n 100000 [--workers 1]
"""

import argparse
import subprocess
import sys
import time
from pathlib import Path

from citemerge import synthgen

_RUN = """
import resource, sys
from citemerge.cli import main
code = main(sys.argv[1:])
own = next(int(l.split()[1]) for l in open("/proc/self/status") if l.startswith("VmHWM"))
print(code, max(own, resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss))
"""


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    t0 = time.perf_counter()
    paths = synthgen.generate(synthgen.GenConfig(seed=args.seed, n1=args.n, n2=args.n,
                                                 title_noise_rate=0.2), args.out)
    print(f"generate {time.perf_counter() - t0:.1f}s", file=sys.stderr)

    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-c", _RUN, "run", "--config", str(paths["pipeline"]),
                           "--workers", str(args.workers)], capture_output=True, text=True)
    wall = time.perf_counter() - t0
    sys.stderr.write(proc.stderr)
    code, peak_kb = proc.stdout.split()[-2:]
    print(f"exit={code} wall={wall:.1f}s peak_rss={int(peak_kb) / 1024:.0f}MB")


if __name__ == "__main__":
    main()

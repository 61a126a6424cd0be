"""Run a scenario in handover and independent mode, then compare the outputs.

    python3 scripts/run_both_modes.py --config scenarios/two_bs_crossing.json --out results/two_bs
"""

import argparse
import sys
from pathlib import Path

from disac.cli import main as cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=Path("scenarios/two_bs_crossing.json"))
    p.add_argument("--out", type=Path, default=Path("results/two_bs"))
    p.add_argument("--mc-runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    args = p.parse_args()
    extra = []
    for flag, val in (("--mc-runs", args.mc_runs), ("--seed", args.seed), ("--workers", args.workers)):
        if val is not None:
            extra += [flag, str(val)]
    for mode in ("handover", "independent"):
        code = cli(["run", "--config", str(args.config), "--mode", mode, "--out", str(args.out / mode), *extra])
        if code:
            return code
    return cli(["compare", "--a", str(args.out / "handover"), "--b", str(args.out / "independent"),
                "--out", str(args.out / "compare")])


if __name__ == "__main__":
    sys.exit(main())

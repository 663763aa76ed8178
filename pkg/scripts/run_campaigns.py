"""Run the shipped campaign configs and write one CSV per config.

usage: python3 scripts/run_campaigns.py [out_dir] [config ...]
Set TISIM_WORKERS to run cells in parallel.
"""

import sys
from pathlib import Path

from tisim.cli import main

HERE = Path(__file__).resolve().parent


def run(out_dir: Path, configs: list[Path]) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for conf in configs:
        out = out_dir / f"{conf.stem}.csv"
        print(f"== {conf.name} -> {out}", flush=True)
        status = max(status, main(["bench", str(conf), "-o", str(out)]))
    return status


if __name__ == "__main__":
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("results")
    configs = [Path(a) for a in sys.argv[2:]] or sorted((HERE / "configs").glob("*.conf"))
    sys.exit(run(out_dir, configs))

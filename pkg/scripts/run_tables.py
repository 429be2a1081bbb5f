"""Regenerate the MSE and QML-vs-PC distance tables over the full design grid.

Usage: python scripts/run_tables.py [--config scripts/configs/mc_full.json] [--threads K] [--out DIR]
"""
import argparse
import json
import time
from pathlib import Path

from fme import montecarlo


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", default=str(Path(__file__).parent / "configs" / "mc_full.json"))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--reps", type=int)
    p.add_argument("--out", default="results")
    args = p.parse_args()

    d = json.loads(Path(args.config).read_text())
    d["threads"] = args.threads
    if args.reps:
        d["replications"] = args.reps
    cfg = montecarlo.McConfig.from_dict(d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start = time.time()
    result = montecarlo.run_mc(cfg)
    (out / "tables.csv").write_text(montecarlo.to_csv(result))
    (out / "tables.txt").write_text(montecarlo.format_tables(result))
    (out / "config.json").write_text(json.dumps(montecarlo.config_dict(cfg), indent=2))
    print(montecarlo.format_tables(result))
    print(f"{len(cfg.grid)} cells x {cfg.replications} replications in {time.time() - start:.0f}s -> {out}/")


if __name__ == "__main__":
    main()

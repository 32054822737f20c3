"""Train the reference configs on the ETT subsets and compare against targets.

Expects ETTh1.csv, ETTh2.csv and ETTm2.csv in --data-dir (default: $REPNET_DATA_DIR
or ./data). Writes one run directory per task under --out-dir.
"""

import argparse
import json
import logging
import os
import time
from dataclasses import replace
from pathlib import Path

from repnet.config import load_config
from repnet.experiments import run_experiment

ROOT = Path(__file__).resolve().parents[1]

# (config, csv, mse ceiling, mae ceiling)
TASKS = [
    ("etth1_96.yaml", "ETTh1.csv", 0.400, 0.425),
    ("etth2_96.yaml", "ETTh2.csv", 0.305, None),
    ("ettm2_96.yaml", "ETTm2.csv", 0.185, None),
    ("etth1_720.yaml", "ETTh1.csv", 0.50, None),
]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", type=Path, default=Path(os.environ.get("REPNET_DATA_DIR", ROOT / "data")))
    p.add_argument("--out-dir", type=Path, default=ROOT / "runs" / "reproduce")
    p.add_argument("--device", default="cpu")
    p.add_argument("--only", nargs="*", help="subset of config file names")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rows = []
    for cfg_name, csv_name, mse_max, mae_max in TASKS:
        if args.only and cfg_name not in args.only:
            continue
        cfg = load_config(ROOT / "configs" / cfg_name)
        cfg = replace(cfg, data=replace(cfg.data, path=str(args.data_dir / csv_name)))
        t0 = time.time()
        rep = run_experiment(cfg, args.out_dir / cfg_name.removesuffix(".yaml"), args.device)
        ok = rep.test_mse <= mse_max and (mae_max is None or rep.test_mae <= mae_max)
        rows.append({"config": cfg_name, "mse": rep.test_mse, "mae": rep.test_mae, "mse_max": mse_max,
                     "mae_max": mae_max, "minutes": (time.time() - t0) / 60, "pass": ok})
        print(json.dumps(rows[-1]))
    (args.out_dir / "summary.json").write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()

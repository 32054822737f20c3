"""Write an ETT-shaped CSV (date + 7 channels) of seasonal signals plus noise.

Useful for exercising the pipeline end to end when the benchmark files are not
at hand. Numbers obtained on it say nothing about benchmark accuracy.
"""

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

COLUMNS = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]
STEP = {"h": "1h", "15min": "15min", "10min": "10min"}


def synthesize(rows: int, freq: str, channels: int, seed: int) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    stamps = pd.date_range("2016-07-01", periods=rows, freq=STEP[freq])
    hours = (stamps - stamps[0]) / pd.Timedelta(hours=1)
    hours = np.asarray(hours, dtype=np.float64)
    data = {"date": stamps.strftime("%Y-%m-%d %H:%M:%S")}
    for c in range(channels):
        phase = rng.uniform(0, 2 * np.pi)
        daily = rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * hours / 24 + phase)
        weekly = rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * hours / 168 + 2 * phase)
        drift = np.cumsum(rng.normal(0, 0.02, rows))
        name = COLUMNS[c] if channels == len(COLUMNS) else f"ch{c}"
        data[name] = np.round(5 + daily + weekly + drift + rng.normal(0, 0.2, rows), 4)
    return pd.DataFrame(data)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--rows", type=int, default=17420)
    p.add_argument("--freq", choices=sorted(STEP), default="h")
    p.add_argument("--channels", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    synthesize(args.rows, args.freq, args.channels, args.seed).to_csv(args.out, index=False)
    print(f"wrote {args.rows} rows to {args.out}")


if __name__ == "__main__":
    main()

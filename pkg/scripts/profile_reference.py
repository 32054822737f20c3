"""Parameter count, time per iteration and peak memory of a config at batch size 1
with lookback = horizon = 96."""

import argparse
import json
from pathlib import Path

from repnet.config import load_config
from repnet.model import build_model, count_parameters
from repnet.profiling import profile_efficiency

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path, nargs="?", default=ROOT / "configs" / "etth1_96.yaml")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--device", default="cpu")
    args = p.parse_args()
    cfg = load_config(args.config).model
    prof = profile_efficiency(cfg, batch_size=1, iters=args.iters, device=args.device)
    print(json.dumps({
        "n_params": prof.n_params,
        "n_params_without_tables": count_parameters(build_model(cfg), include_embedding_tables=False),
        "ms_per_iter": 1e3 * prof.seconds_per_iter,
        "peak_memory_mib": prof.peak_memory_bytes / 2**20,
    }, indent=1))


if __name__ == "__main__":
    main()

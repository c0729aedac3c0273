"""Recompute bench metrics from dumped predictions and compare with report.json.

    python3 tools/recompute_metrics.py BENCH_OUT_DIR SUITE_DIR [--rtol 1e-9]

BENCH_OUT_DIR is a `dpfaga bench --dump-predictions` output directory. Exits
non-zero when any recomputed MSE or NRMSE differs from the report.
"""
import argparse
import json
import math
import pathlib
import sys

import numpy as np


def load_truth(suite_dir):
    sets = []
    for path in sorted(pathlib.Path(suite_dir).glob("test_*.jsonl")):
        with open(path) as f:
            next(f)
            sets.append(np.array([json.loads(line)["y"] for line in f if line.strip()]))
    return sets


def nrmse_varying(pred, truth):
    rng = truth.max(axis=0) - truth.min(axis=0)
    keep = rng > 0
    if not keep.any():
        return None
    rmse = np.sqrt(((pred - truth) ** 2).mean(axis=0))
    return float((rmse[keep] / rng[keep]).mean())


def close(a, b, rtol):
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=rtol, abs_tol=1e-300)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("suite_dir")
    ap.add_argument("--rtol", type=float, default=1e-9)
    args = ap.parse_args()

    out = pathlib.Path(args.out_dir)
    report = json.loads((out / "report.json").read_text())
    truth = load_truth(args.suite_dir)
    checked = mismatched = 0
    for cell in report["cells"]:
        cell_id = f"{cell['run']}_{cell['model']}_{cell['activation']}"
        for ev in cell["evaluations"]:
            dump = out / "predictions" / f"{cell_id}_{ev['variant']}_predictions.jsonl"
            with open(dump) as f:
                for line in f:
                    rec = json.loads(line)
                    i = rec["dataset"]
                    pred = np.array(rec["predictions"]).reshape(rec["rows"], rec["cols"])
                    mse = float(((pred - truth[i]) ** 2).mean())
                    nrmse = nrmse_varying(pred, truth[i])
                    checked += 1
                    if not (close(mse, ev["mse"][i], args.rtol) and close(nrmse, ev["nrmse"][i], args.rtol)):
                        mismatched += 1
                        print(f"{cell_id} {ev['variant']} dataset {i}: "
                              f"mse {mse} vs {ev['mse'][i]}, nrmse {nrmse} vs {ev['nrmse'][i]}")
    print(f"checked {checked} dataset evaluations, {mismatched} mismatched")
    return 1 if mismatched or checked == 0 else 0


if __name__ == "__main__":
    sys.exit(main())

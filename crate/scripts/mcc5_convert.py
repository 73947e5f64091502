#!/usr/bin/env python3
"""Convert MCC5-THU CSV files into shmrep record files (CSV data + JSON sidecar).

The label list is a CSV with columns: file,damage_label,excitation_label
(file paths relative to the list). Only the six accelerometer columns are
kept; pass --columns to override the zero-based column indices.
"""
import argparse
import csv
import json
import pathlib


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("labels", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--columns", default="2,3,4,5,6,7")
    ap.add_argument("--sample-rate", type=float, default=12800.0)
    args = ap.parse_args()
    cols = [int(c) for c in args.columns.split(",")]
    args.out.mkdir(parents=True, exist_ok=True)

    with args.labels.open(newline="") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        src = args.labels.parent / row["file"]
        name = f"d{int(row['damage_label'])}_e{int(row['excitation_label'])}_{src.stem}"
        n = 0
        with src.open(newline="") as fin, (args.out / f"{name}.csv").open("w", newline="") as fout:
            reader = csv.reader(fin)
            next(reader)
            writer = csv.writer(fout)
            writer.writerow([f"ch{i}" for i in range(len(cols))])
            for rec in reader:
                writer.writerow([rec[c] for c in cols])
                n += 1
        meta = {
            "name": name,
            "sample_rate": args.sample_rate,
            "damage_label": int(row["damage_label"]),
            "excitation_label": int(row["excitation_label"]),
            "channels": len(cols),
            "samples": n,
            "format": "csv",
            "data_file": f"{name}.csv",
        }
        (args.out / f"{name}.json").write_text(json.dumps(meta, indent=2))
        print(f"{name}: {n} samples")


if __name__ == "__main__":
    main()

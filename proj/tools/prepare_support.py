#!/usr/bin/env python3
"""Build data/support.csv from the raw SUPPORT2 table (support2.csv).

Keeps the 14 covariates of the usual DeepSurv selection, drops incomplete
rows and one-hot encodes race and cancer status.

    python3 tools/prepare_support.py path/to/support2.csv data/support.csv

The raw table ships inside several survival packages, e.g. the
auton-survival wheel (auton_survival/datasets/support2.csv); a .whl path is
accepted directly.
"""

import argparse
import io
import zipfile

import pandas as pd

NUMERIC = ["age", "num.co", "diabetes", "dementia", "meanbp", "hrt", "resp", "temp", "wblc", "sod", "crea"]
RACES = ["white", "black", "hispanic", "other", "asian"]
CANCER = ["no", "yes", "metastatic"]


def read_raw(path):
    if path.endswith(".whl"):
        with zipfile.ZipFile(path) as z:
            name = next(n for n in z.namelist() if n.endswith("datasets/support2.csv"))
            return pd.read_csv(io.BytesIO(z.read(name)))
    return pd.read_csv(path)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("raw")
    ap.add_argument("out")
    args = ap.parse_args()

    raw = read_raw(args.raw)
    df = raw[["age", "sex", "race", "ca", *NUMERIC[1:], "d.time", "death"]].dropna()

    out = pd.DataFrame({"age": df["age"], "male": (df["sex"] == "male").astype(int)})
    for col in NUMERIC[1:]:
        out[col.replace(".", "_")] = df[col]
    for r in RACES:
        out["race_" + r] = (df["race"] == r).astype(int)
    for c in CANCER:
        out["ca_" + c] = (df["ca"] == c).astype(int)
    out["time"] = df["d.time"].astype(float)
    out["event"] = df["death"].astype(int)
    out.to_csv(args.out, index=False, float_format="%.10g")
    print(f"{args.out}: {len(out)} rows, {out.shape[1] - 2} covariates, {out['event'].mean():.3f} event rate")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Convert the scikit-learn tabular datasets into canonical bundles.

Each bundle directory holds features (standardized per column), labels,
a manifest.json and no edge list. Splits are drawn per seed at run time
from the sizes recorded in the manifest.

    python3 tools/make_bundle.py --out data [--binary] [wine cancer digits]
"""

import argparse
import json
import pathlib

import numpy as np
from sklearn import datasets

LOADERS = {
    "wine": (datasets.load_wine, (10, 20)),
    "cancer": (datasets.load_breast_cancer, (10, 20)),
    "digits": (datasets.load_digits, (50, 100)),
}


def standardize(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def write_bundle(name, out, binary):
    loader, (n_train, n_val) = LOADERS[name]
    data = loader()
    x = standardize(np.asarray(data.data, dtype=np.float64))
    y = np.asarray(data.target, dtype=np.int64)
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    n, f = x.shape
    if binary:
        x.astype("<f8").tofile(d / "features.f64")
        (d / "features.json").write_text(
            json.dumps({"shape": [n, f], "dtype": "float64", "endian": "little"}) + "\n")
        features = {"format": "f64", "file": "features.f64", "header": "features.json"}
    else:
        with open(d / "features.csv", "w") as fh:
            for row in x:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        features = {"format": "csv", "file": "features.csv"}
    with open(d / "labels.csv", "w") as fh:
        fh.write("node_id,class_id\n")
        for i, c in enumerate(y):
            fh.write(f"{i},{c}\n")
    manifest = {
        "name": name,
        "n_nodes": int(n),
        "n_features": int(f),
        "n_classes": int(y.max() + 1),
        "features": features,
        "labels": "labels.csv",
        "split_protocol": {"train": n_train, "validation": n_val, "test": int(n - n_train - n_val)},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"{name}: {n} nodes, {f} features, {manifest['n_classes']} classes -> {d}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="subset of: " + " ".join(LOADERS))
    ap.add_argument("--out", default="data", type=pathlib.Path)
    ap.add_argument("--binary", action="store_true", help="write features as raw float64")
    args = ap.parse_args()
    unknown = [n for n in args.names if n not in LOADERS]
    if unknown:
        ap.error("unknown dataset(s): " + " ".join(unknown))
    for name in args.names or list(LOADERS):
        write_bundle(name, args.out, args.binary)


if __name__ == "__main__":
    main()

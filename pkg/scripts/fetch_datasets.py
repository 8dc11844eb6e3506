#!/usr/bin/env python3
"""Download the two LIBSVM benchmark datasets used by the acceptance suite.

Fetches into ``data/`` (next to this repository's root):

* ``diabetes_scale`` — Pima Indians Diabetes, n=768, d=8, features in [-1, 1]
* ``german.numer``   — German Credit (numeric), n=1000, d=24

Both come from the LIBSVM binary-classification collection.  The benchmark
tests in ``tests/test_acceptance.py`` skip with an explanatory message when
these files are absent, so an offline environment degrades gracefully; run
this script once on a machine with network access to enable them.

Usage:  python3 scripts/fetch_datasets.py [--dest DIR]
"""

import argparse
import os
import sys
import urllib.error
import urllib.request

BASE = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary"
DATASETS = {
    "diabetes_scale": {"n": 768, "d": 8},
    "german.numer": {"n": 1000, "d": 24},
}


def _fetch(name, dest_dir):
    url = f"{BASE}/{name}"
    dest = os.path.join(dest_dir, name)
    if os.path.exists(dest):
        print(f"{dest} already present, skipping download")
        return dest
    print(f"fetching {url}")
    with urllib.request.urlopen(url, timeout=60) as resp:
        body = resp.read()
    with open(dest, "wb") as fh:
        fh.write(body)
    return dest


def _verify(name, path):
    from pggpc.data import load

    expected = DATASETS[name]
    ds = load(path, "libsvm", n_features=expected["d"])
    if ds.n != expected["n"] or ds.d != expected["d"]:
        raise SystemExit(
            f"{path}: expected n={expected['n']}, d={expected['d']}, "
            f"got n={ds.n}, d={ds.d}"
        )
    print(f"{path}: ok (n={ds.n}, d={ds.d}, labels mapped to -1/+1)")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    default_dest = os.path.join(os.path.dirname(__file__), os.pardir, "data")
    parser.add_argument("--dest", default=default_dest, help="output directory")
    args = parser.parse_args()

    os.makedirs(args.dest, exist_ok=True)
    for name in DATASETS:
        try:
            path = _fetch(name, args.dest)
        except (urllib.error.URLError, OSError) as exc:
            print(
                f"error: could not download {name}: {exc}\n"
                "No network access?  The benchmark tests will skip until the "
                f"file exists at {os.path.join(args.dest, name)}.",
                file=sys.stderr,
            )
            return 1
        _verify(name, path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Normalize a reuters8 (R8) distribution into data/reuters8-{train,test}.tsv.

The widely mirrored R8 files (r8-train-*.txt / r8-test-*.txt) already carry
one document per line with the class first, either tab- or space-separated:

    python3 scripts/convert_reuters8.py r8-train-stemmed.txt r8-test-stemmed.txt

Output format: `label<TAB>text`, UTF-8, LF endings.
"""

import argparse
import os
import re

R8_LABELS = {"acq", "crude", "earn", "grain", "interest", "money-fx", "ship", "trade"}


def convert(src: str, dst: str) -> int:
    n = 0
    with open(src, encoding="utf-8", errors="replace") as fin, open(
        dst, "w", encoding="utf-8", newline="\n"
    ) as fout:
        for i, line in enumerate(fin, 1):
            line = line.strip()
            if not line:
                continue
            if "\t" in line:
                label, text = line.split("\t", 1)
            else:
                label, _, text = line.partition(" ")
            label = label.strip()
            if label not in R8_LABELS:
                raise SystemExit(f"{src}:{i}: unknown R8 label `{label}`")
            text = re.sub(r"\s+", " ", text).strip()
            if not text:
                continue
            fout.write(f"{label}\t{text}\n")
            n += 1
    return n


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("train_src")
    parser.add_argument("test_src")
    parser.add_argument("--out-dir", default="data")
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    n_train = convert(args.train_src, os.path.join(args.out_dir, "reuters8-train.tsv"))
    n_test = convert(args.test_src, os.path.join(args.out_dir, "reuters8-test.tsv"))
    print(f"wrote {n_train} train / {n_test} test documents to {args.out_dir}/")


if __name__ == "__main__":
    main()

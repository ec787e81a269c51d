#!/usr/bin/env python3
"""Build data/20news4.tsv: a 4-category subset of 20 Newsgroups (~2k docs).

Needs scikit-learn with the dataset available (downloads on first use when
the machine has network access):

    python3 scripts/convert_20news.py [--out data/20news4.tsv]

Output format: one document per line, `label<TAB>text`, UTF-8, LF endings.
"""

import argparse
import os
import re

CATEGORIES = [
    "comp.graphics",
    "rec.sport.hockey",
    "sci.med",
    "talk.politics.guns",
]
PER_CATEGORY = 500


def flatten(text: str) -> str:
    # TSV safety: no tabs or newlines inside the text column.
    return re.sub(r"\s+", " ", text).strip()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/20news4.tsv")
    parser.add_argument("--per-category", type=int, default=PER_CATEGORY)
    args = parser.parse_args()

    from sklearn.datasets import fetch_20newsgroups

    bunch = fetch_20newsgroups(
        subset="all",
        categories=CATEGORIES,
        remove=("headers", "footers", "quotes"),
        shuffle=True,
        random_state=0,
    )

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    kept = {c: 0 for c in CATEGORIES}
    n = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for text, target in zip(bunch.data, bunch.target):
            label = bunch.target_names[target]
            if kept[label] >= args.per_category:
                continue
            body = flatten(text)
            if len(body.split()) < 10:
                continue
            fh.write(f"{label}\t{body}\n")
            kept[label] += 1
            n += 1
    print(f"wrote {n} documents to {args.out}: {kept}")


if __name__ == "__main__":
    main()

"""Materialize the navigation corpus from its grammar.

Writes the full 20910-pair command/action dataset as TSV (default) or
in the canonical "IN: ... OUT: ..." single-line format, ready for
`seqlab resplit`.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from seqlab.data import write_tsv_pairs  # noqa: E402
from seqlab.scan import scan_pairs  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/scan_all.tsv")
    parser.add_argument("--format", choices=("tsv", "native"), default="tsv")
    args = parser.parse_args()

    pairs = scan_pairs()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "tsv":
        write_tsv_pairs(pairs, out)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(f"IN: {' '.join(p.src)} OUT: {' '.join(p.tgt)}\n")
    print(f"wrote {len(pairs)} pairs to {out}")


if __name__ == "__main__":
    main()

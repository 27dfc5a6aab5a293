"""List the real datasets used by ``itercur verify --data-dir`` and where to get them.

Nothing is downloaded.  Fetch each matrix yourself, convert it to Matrix
Market if needed, and save it under the file name shown.
"""

import argparse
import os

SOURCES = [
    ("reuters.mtx", "Reuters-21578 term-document matrix, rows scaled to unit norm by verify",
     "build from the Reuters-21578 text categorization collection"),
    ("g7jac100.mtx", "Jacobian from an overlapping generations economic model",
     "SuiteSparse Matrix Collection, matrix name g7jac100"),
    ("invextr1_new.mtx", "computational fluid dynamics matrix",
     "SuiteSparse Matrix Collection, matrix name invextr1_new"),
    ("techtc.mtx", "TechTC term-document matrix (leverage-score study only, not checked by verify)",
     "http://gabrilovich.com/resources/data/techtc/"),
]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data-dir", default=os.environ.get("ITERCUR_DATA_DIR"),
                        help="report which files are already present")
    args = parser.parse_args(argv)
    for name, what, where in SOURCES:
        mark = ""
        if args.data_dir:
            mark = "[found]   " if os.path.exists(os.path.join(args.data_dir, name)) else "[missing] "
        print(f"{mark}{name}\n    {what}\n    source: {where}")


if __name__ == "__main__":
    main()

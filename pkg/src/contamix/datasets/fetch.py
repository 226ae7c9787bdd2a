"""Fetch the optional real-data fixtures that are not bundled.

The wine data ships with the package (178 samples, 13 chemical and
physical measurements of three Italian cultivars; public domain).  The
remaining fixtures are classic public datasets distributed through R
packages; this script downloads their CSV exports and records a sha256
sidecar so later loads can verify integrity:

- ``banknote``: 200 Swiss banknotes, 6 measurements, genuine/counterfeit
  status (R package ``mclust``).
- ``ais``: 202 Australian Institute of Sport athletes, 11 body and blood
  measurements plus sex (R package ``DAAG``/``sn``).

The female-voles data (7 skull measurements, two Microtus species) has no
stable public CSV export; supply ``voles.csv`` manually with a ``species``
label column if you have it.

Usage: ``python -m contamix.datasets.fetch [name ...]``
"""

import csv
import hashlib
import sys
import urllib.request
from pathlib import Path

HERE = Path(__file__).parent

SOURCES = {
    "banknote": {
        "url": "https://vincentarelbundock.github.io/Rdatasets/csv/mclust/banknote.csv",
        "label": "Status",
    },
    "ais": {
        "url": "https://vincentarelbundock.github.io/Rdatasets/csv/DAAG/ais.csv",
        "label": "sex",
        "keep": ["rcc", "wcc", "hc", "hg", "ferr", "bmi", "ssf", "pcBfat",
                 "lbm", "ht", "wt", "sex"],
    },
}


def fetch(name):
    spec = SOURCES[name]
    raw = urllib.request.urlopen(spec["url"], timeout=60).read().decode("utf-8")
    rows = list(csv.reader(raw.splitlines()))
    header = rows[0]
    # Rdatasets exports carry an unnamed row-index column; drop it.
    drop = {i for i, h in enumerate(header) if h in ("", "rownames")}
    keep = spec.get("keep")
    if keep is not None:
        drop |= {i for i, h in enumerate(header) if h not in keep}
    idx = [i for i in range(len(header)) if i not in drop]
    out = HERE / f"{name}.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        for row in rows:
            wr.writerow([row[i].strip('"') for i in idx])
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    out.with_suffix(".sha256").write_text(f"{digest}  {out.name}\n")
    print(f"fetched {name}: {out} ({digest[:12]}...)")


def main(argv=None):
    names = (argv or sys.argv[1:]) or list(SOURCES)
    for name in names:
        if name not in SOURCES:
            print(f"unknown fixture {name!r}; choices: {sorted(SOURCES)}",
                  file=sys.stderr)
            return 1
        fetch(name)
    return 0


if __name__ == "__main__":
    sys.exit(main())

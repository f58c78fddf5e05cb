"""Freeze reference LCC projections from pyproj into tests/fixtures.

pyproj is only needed to (re)generate the fixture; the test suite reads the
stored JSON and never imports it.
"""

import json
from pathlib import Path

import numpy as np
from pyproj import Transformer

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "lcc_reference.json"
PROJ = "+proj=lcc +lat_1=25 +lat_2=25 +lat_0=25 +lon_0=-95 +R=6371200 +x_0=0 +y_0=0 +units=m +no_defs"


def main():
    rng = np.random.default_rng(211)
    lat = rng.uniform(20.0, 55.0, 1000)
    lon = rng.uniform(-130.0, -60.0, 1000)
    tr = Transformer.from_crs("+proj=longlat +R=6371200 +no_defs", PROJ, always_xy=True)
    x, y = tr.transform(lon, lat)
    rows = [
        [round(float(a), 10), round(float(b), 10), float(c), float(d)]
        for a, b, c, d in zip(lat, lon, x, y)
    ]
    OUT.write_text(json.dumps({"proj": PROJ, "rows": rows}))
    print(f"wrote {len(rows)} points to {OUT}")


if __name__ == "__main__":
    main()

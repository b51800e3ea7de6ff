"""Writes the bundled 48-hour forecast: evening load peak, wind dip at hours 18-19."""
import json
import pathlib
import sys

# Hour of day -> load factor on the case's base loads.
LOAD = [(0, 0.76), (4, 0.70), (7, 0.78), (10, 0.88), (13, 0.90), (16, 0.93), (18, 1.00), (19, 1.00),
        (21, 0.92), (23, 0.80), (24, 0.76)]
# Hour of day -> wind forecast, MW.
WIND = [(0, 380), (4, 420), (8, 330), (12, 250), (15, 200), (17, 90), (18, 40), (19, 40), (20, 110),
        (22, 260), (23, 340), (24, 380)]


def interp(points, h):
    for (h0, v0), (h1, v1) in zip(points, points[1:]):
        if h0 <= h <= h1:
            return v0 + (v1 - v0) * (h - h0) / (h1 - h0)
    raise ValueError(h)


hours = range(1, 49)
scenario = dict(
    name="evening-peak-48h",
    period_hours=1.0,
    horizon=24,
    interval=[2, 25],
    margin_pu=0.05,
    load_factor=[round(interp(LOAD, h % 24), 4) for h in hours],
    wind_mw={"W17": [round(interp(WIND, h % 24), 1) for h in hours]},
)
out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent / 'data' / 'scenario_48h.json'
with open(out, 'w') as f:
    json.dump(scenario, f, indent=1)

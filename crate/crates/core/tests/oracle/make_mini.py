"""Writes the bundled 10-county mini-dataset.

Trips are base volumes times a weekly multiplier. The baseline week
(Mar 16-20) uses 1.0 and the trough week (Apr 13-17) uses 0.65, so every
county whose inflow scales uniformly shows exactly -35%. Two pairs break
the pattern: Manhattan -> Fairfield runs on Mondays only, and
Westchester -> Fairfield never scales.
"""

import datetime as dt
import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "mini"

START = dt.date(2020, 3, 13)
END = dt.date(2020, 4, 24)
HOLIDAYS = {dt.date(2020, 4, 10)}

BASE = {
    # within New York City
    ("36005", "36061"): 400, ("36047", "36061"): 500, ("36081", "36061"): 450,
    ("36085", "36047"): 120, ("36061", "36047"): 300,
    # out of the city
    ("36061", "34017"): 200, ("36061", "34003"): 150, ("36061", "36119"): 180,
    ("36061", "36059"): 160, ("36061", "09001"): 60, ("36047", "36059"): 140,
    ("36081", "36059"): 220, ("36005", "36119"): 130, ("36085", "34017"): 40,
    # into the city
    ("34017", "36061"): 260, ("34003", "36061"): 190, ("36119", "36061"): 240,
    ("36059", "36061"): 210, ("09001", "36061"): 80, ("36059", "36081"): 170,
    ("36119", "36005"): 150, ("34017", "36085"): 30,
    # between outside counties
    ("34003", "34017"): 90, ("34017", "34003"): 85, ("36119", "09001"): 70,
    ("09001", "36119"): 75, ("36059", "36119"): 50,
}

MONDAY_ONLY = {("36061", "09001")}
UNSCALED = {("36119", "09001")}

WEEK_MULTIPLIER = {
    dt.date(2020, 3, 9): 1.0,
    dt.date(2020, 3, 16): 1.0,
    dt.date(2020, 3, 23): 0.9,
    dt.date(2020, 3, 30): 0.8,
    dt.date(2020, 4, 6): 0.7,
    dt.date(2020, 4, 13): 0.65,
    dt.date(2020, 4, 20): 0.75,
}

# fips, population, pct_age65, pct_male, pct_african_american, median_income
DEMOGRAPHICS = [
    ("09001", 943332, 16.5, 48.7, 11.9, 95645),
    ("34003", 932202, 17.2, 48.4, 6.3, 101144),
    ("34017", 672391, 11.9, 49.6, 11.8, 72165),
    ("36005", 1418207, 12.8, 47.2, 38.3, 40088),
    ("36047", 2559903, 13.6, 47.4, 33.5, 60231),
    ("36059", 1356924, 17.8, 48.5, 12.2, 116304),
    ("36061", 1628706, 16.5, 47.1, 17.8, 86553),
    ("36081", 2253858, 15.1, 48.6, 20.7, 68666),
    ("36085", 476143, 16.2, 48.3, 11.5, 85381),
    ("36119", 967506, 17.3, 48.1, 15.8, 96610),
]

# cumulative cases on day k after Mar 1: a*k + b*k*k
CASE_COEF = {
    "09001": (2, 1), "34003": (3, 2), "34017": (1, 3), "36005": (5, 4),
    "36047": (4, 6), "36059": (6, 3), "36061": (7, 5), "36081": (3, 7),
    "36085": (2, 2), "36119": (5, 2),
}
CASES_FROM = dt.date(2020, 3, 1)
CASES_TO = dt.date(2020, 5, 15)


def days(a, b):
    d = a
    while d <= b:
        yield d
        d += dt.timedelta(days=1)


def monday(d):
    return d - dt.timedelta(days=d.weekday())


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "od.csv", "w") as f:
        f.write("date,origin_fips,destination_fips,trips\n")
        for d in days(START, END):
            if d.weekday() >= 5 or d in HOLIDAYS:
                continue
            m = WEEK_MULTIPLIER[monday(d)]
            for (o, t), base in sorted(BASE.items()):
                if (o, t) in MONDAY_ONLY and d.weekday() != 0:
                    continue
                trips = base if (o, t) in UNSCALED else round(base * m, 6)
                f.write(f"{d},{o},{t},{trips:g}\n")
        # a weekend row the loader must drop
        f.write("2020-03-14,36061,36059,999\n")
    with open(OUT / "cases.csv", "w") as f:
        f.write("date,fips,cumulative_cases\n")
        for d in days(CASES_FROM, CASES_TO):
            k = (d - CASES_FROM).days
            for fips in sorted(CASE_COEF):
                a, b = CASE_COEF[fips]
                f.write(f"{d},{fips},{a * k + b * k * k}\n")
    with open(OUT / "demographics.csv", "w") as f:
        f.write("fips,population,pct_age65,pct_male,pct_african_american,median_income\n")
        for row in DEMOGRAPHICS:
            f.write(",".join(str(v) for v in row) + "\n")
    config = {
        "trips": ["od*.csv"],
        "cases": "cases.csv",
        "demographics": "demographics.csv",
        "calendar": {"start": str(START), "end": str(END), "holidays": [str(h) for h in sorted(HOLIDAYS)]},
        "stage_cuts": ["2020-03-13", "2020-04-13", "2020-04-23"],
        "regions": {"new_york_city": ["36005", "36047", "36061", "36081", "36085"]},
        "baseline": {"start": "2020-03-16", "end": "2020-03-20"},
        "pct_change_weeks": ["2020-03-16", "2020-04-13", "2020-04-24"],
        "top_k": 3,
        "lags": [0, 1, 2, 3],
    }
    with open(OUT / "mini.json", "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()

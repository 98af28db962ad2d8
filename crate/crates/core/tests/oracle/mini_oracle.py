"""Independent recomputation of the mini-dataset result files.

Reads the CSV inputs and mini.json directly and writes golden/*.csv using
plain loops over the definitions. Regressions solve the normal equations
in exact rational arithmetic.
"""

import csv
import datetime as dt
import json
import math
import pathlib
from collections import defaultdict
from fractions import Fraction

DATA = pathlib.Path(__file__).resolve().parent.parent / "data" / "mini"
GOLDEN = DATA / "golden"


def date(s):
    return dt.date.fromisoformat(s)


def f6(v):
    if v is None:
        return ""
    s = "%.6f" % v
    return "0.000000" if s == "-0.000000" else s


def drange(a, b):
    d = a
    while d <= b:
        yield d
        d += dt.timedelta(days=1)


cfg = json.loads((DATA / "mini.json").read_text())
START, END = date(cfg["calendar"]["start"]), date(cfg["calendar"]["end"])
HOLIDAYS = {date(h) for h in cfg["calendar"]["holidays"]}
DAYS = [d for d in drange(START, END) if d.weekday() < 5 and d not in HOLIDAYS]
CUTS = [date(c) for c in cfg["stage_cuts"]]
REGION = set(cfg["regions"]["new_york_city"])
LAGS = cfg["lags"]
TOP_K = cfg["top_k"]
TOTAL_COUNTIES = 3143

# trips[d] = list of (origin, dest, trips), weekend rows dropped
trips = defaultdict(list)
for path in sorted(DATA.glob("od*.csv")):
    with open(path) as f:
        for row in csv.DictReader(f):
            d = date(row["date"])
            if d in DAYS:
                trips[d].append((row["origin_fips"], row["destination_fips"], float(row["trips"])))
COUNTIES = sorted({c for d in DAYS for o, t, _ in trips[d] for c in (o, t)})

cases = {}
with open(DATA / "cases.csv") as f:
    for row in csv.DictReader(f):
        cases[(row["fips"], date(row["date"]))] = float(row["cumulative_cases"])
CASE_END = max(d for _, d in cases)

demo = {}
with open(DATA / "demographics.csv") as f:
    for row in csv.DictReader(f):
        demo[row["fips"]] = {
            "pop": int(row["population"]),
            "age65": float(row["pct_age65"]),
            "male": float(row["pct_male"]),
            "afri": float(row["pct_african_american"]),
            "income": float(row["median_income"]),
        }


def cum(c, d):
    if d > CASE_END:
        return None
    return cases.get((c, d), 0.0)


def write(name, header, rows):
    with open(GOLDEN / name, "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(r) + "\n")


def stage(d):
    if d <= CUTS[0]:
        return "pre_pandemic"
    if d <= CUTS[1]:
        return "behavior_change"
    if d <= CUTS[2]:
        return "quarantine_fatigue"
    return "partial_reopening"


PERIODS = {
    "after_pandemic": (CUTS[0] + dt.timedelta(days=1), END),
    "behavior_change": (CUTS[0] + dt.timedelta(days=1), CUTS[1]),
    "quarantine_fatigue": (CUTS[1] + dt.timedelta(days=1), CUTS[2]),
    "partial_reopening": (CUTS[2] + dt.timedelta(days=1), END),
    "pre_pandemic": (START, CUTS[0]),
}
PERIOD_ORDER = ["after_pandemic", "behavior_change", "quarantine_fatigue", "partial_reopening", "pre_pandemic"]
IMPORTANCE_ORDER = PERIOD_ORDER[:4]


def days_in(a, b):
    return [d for d in DAYS if a <= d <= b]


def inflow(c, d):
    return sum(v for o, t, v in trips[d] if t == c)


def mean_inflow(c, window_days):
    return sum(inflow(c, d) for d in window_days) / len(window_days)


def analyze():
    totals = [sum(v for _, _, v in trips[d]) for d in DAYS]
    rows = []
    for i, d in enumerate(DAYS):
        w = totals[max(0, i - 1): i + 2]
        rows.append([str(d), f6(totals[i]), f6(sum(w) / len(w))])
    write("trend.csv", ["date", "total", "ma3"], rows)

    b0, b1 = date(cfg["baseline"]["start"]), date(cfg["baseline"]["end"])
    base = {c: mean_inflow(c, days_in(b0, b1)) for c in COUNTIES}
    write("baseline.csv", ["fips", "baseline"], [[c, f6(base[c])] for c in COUNTIES])

    summary = []
    for wd in cfg["pct_change_weeks"]:
        mon = date(wd) - dt.timedelta(days=date(wd).weekday())
        sun = mon + dt.timedelta(days=6)
        wk = days_in(mon, sun)
        pct = {c: (100 * (mean_inflow(c, wk) - base[c]) / base[c] if base[c] > 0 else None) for c in COUNTIES}
        write(f"pct_change_{mon}.csv", ["fips", "pct"], [[c, f6(pct[c])] for c in COUNTIES])
        defined = [v for v in pct.values() if v is not None]
        share = sum(v > 0 for v in defined) / len(defined) if defined else None
        summary.append([str(mon), str(sun), str(len(pct)), str(len(defined)), f6(share)])
    write("pct_change_summary.csv", ["week_start", "week_end", "n_counties", "n_defined", "share_increase"], summary)

    write("stages.csv", ["date", "stage"], [[str(d), stage(d)] for d in DAYS])
    write(
        "periods.csv",
        ["period", "start", "end", "n_days"],
        [[p, str(PERIODS[p][0]), str(PERIODS[p][1]), str(len(days_in(*PERIODS[p])))] for p in PERIOD_ORDER],
    )

    others = [c for c in COUNTIES if c not in REGION]
    rows = []
    for d in DAYS:
        units = {}
        r_in = sum(v for o, t, v in trips[d] if o not in REGION and t in REGION)
        r_out = sum(v for o, t, v in trips[d] if o in REGION and t not in REGION)
        r_no = len({o for o, t, v in trips[d] if o not in REGION and t in REGION and v > 0})
        r_nd = len({t for o, t, v in trips[d] if o in REGION and t not in REGION and v > 0})
        units["region"] = (r_in, r_out, r_no, r_nd)
        for c in others:
            units[c] = (
                sum(v for o, t, v in trips[d] if t == c),
                sum(v for o, t, v in trips[d] if o == c),
                len({o for o, t, v in trips[d] if t == c and v > 0}),
                len({t for o, t, v in trips[d] if o == c and v > 0}),
            )
        ranks = [1 + sum(u[k] > units["region"][k] for u in units.values()) for k in range(4)]
        rows.append([str(d), f6(r_in), f6(r_out), str(r_no), str(r_nd)] + [str(r) for r in ranks])
    write(
        "region_daily.csv",
        ["date", "inflow", "outflow", "n_origins", "n_destinations", "rank_inflow", "rank_outflow", "rank_norigins", "rank_ndest"],
        rows,
    )

    tot = defaultdict(float)
    for d in DAYS:
        for o, t, v in trips[d]:
            if o in REGION and t not in REGION:
                tot[t] += v
    ranked = sorted(((c, v) for c, v in tot.items() if v > 0), key=lambda cv: (-cv[1], cv[0]))[:TOP_K]
    write("top_destinations.csv", ["rank", "fips", "trips"], [[str(i + 1), c, f6(v)] for i, (c, v) in enumerate(ranked)])

    counts = [len({t for o, t, v in trips[d] if o in REGION and t not in REGION and v > 0}) for d in DAYS]
    mean = sum(counts) / len(counts)
    write(
        "destination_spread.csv",
        ["window_start", "window_end", "mean_destinations", "fraction", "total_counties"],
        [[str(START), str(END), f6(mean), f6(mean / TOTAL_COUNTIES), str(TOTAL_COUNTIES)]],
    )


def pearson(x, y):
    n = len(x)
    if n < 3:
        return None
    mx, my = sum(x) / n, sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


def ranks(v):
    out = []
    for a in v:
        less = sum(b < a for b in v)
        equal = sum(b == a for b in v)
        out.append(less + (equal + 1) / 2)
    return out


def median(v):
    s = sorted(v)
    n = len(s)
    if n == 0:
        return None
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def correlate():
    dests = sorted({t for d in DAYS for o, t, v in trips[d] if o in REGION and t not in REGION and v > 0 and t in demo})
    summary = []
    for lag in LAGS:
        rows = []
        ps, ss, n_def = [], [], 0
        for cd in DAYS:
            target = cd - dt.timedelta(days=7 * lag)
            earlier = [d for d in DAYS if d <= target]
            p = s = None
            n = 0
            if earlier:
                td = earlier[-1]
                flows = defaultdict(float)
                for o, t, v in trips[td]:
                    if o in REGION and t not in REGION:
                        flows[t] += v
                x = [flows[c] for c in dests]
                y = [cum(c, cd) for c in dests]
                if all(v is not None for v in y):
                    y = [1000 * v / demo[c]["pop"] for c, v in zip(dests, y)]
                    n = len(x)
                    p = pearson(x, y)
                    s = pearson(ranks(x), ranks(y)) if n >= 3 else None
            if p is not None:
                ps.append(p)
            if s is not None:
                ss.append(s)
            if p is not None and s is not None:
                n_def += 1
            rows.append([str(cd), f6(p), f6(s), str(n), "true" if p is not None and s is not None else "false"])
        write(f"correlations_lag{lag}.csv", ["case_date", "pearson", "spearman", "n", "defined"], rows)
        for name, vals in (("pearson", ps), ("spearman", ss)):
            summary.append(
                [str(lag), name, f6(max(vals) if vals else None), f6(sum(vals) / len(vals) if vals else None), f6(median(vals)), str(n_def)]
            )
    write("correlation_summary.csv", ["lag_weeks", "statistic", "max", "mean", "median", "n_defined"], summary)


def external_risk(a, b):
    er = defaultdict(float)
    origins = defaultdict(set)
    for d in days_in(a, b):
        for o, t, v in sorted(trips[d]):
            if o not in demo:
                continue
            w = 1000 * cum(o, d) / demo[o]["pop"]
            er[t] += w * v
            if w * v > 0:
                origins[t].add(o)
    return er, origins


def solve_normal(cols, y):
    """Least squares with intercept via exact normal equations."""
    X = [[Fraction(1)] + [Fraction(c[i]) for c in cols] for i in range(len(y))]
    Y = [Fraction(v) for v in y]
    p = len(X[0])
    A = [[sum(r[i] * r[j] for r in X) for j in range(p)] + [sum(r[i] * yv for r, yv in zip(X, Y))] for i in range(p)]
    for i in range(p):
        piv = next(k for k in range(i, p) if A[k][i] != 0)
        A[i], A[piv] = A[piv], A[i]
        for k in range(p):
            if k != i and A[k][i] != 0:
                f = A[k][i] / A[i][i]
                A[k] = [u - f * v for u, v in zip(A[k], A[i])]
    coef = [A[i][p] / A[i][i] for i in range(p)]
    fitted = [sum(c * x for c, x in zip(coef, r)) for r in X]
    my = sum(Y) / len(Y)
    sse = sum((a - b) ** 2 for a, b in zip(Y, fitted))
    sst = sum((a - my) ** 2 for a in Y)
    return coef, float(1 - sse / sst)


def fit():
    universe = sorted(set(demo) | set(COUNTIES))
    risk_rows, sev_rows = [], []
    fits, imp = [], {}
    anchors = sorted({PERIODS[p][1] for p in PERIOD_ORDER})
    for anchor in anchors:
        for lag in LAGS:
            for c in universe:
                if c not in demo:
                    continue
                v = cum(c, anchor + dt.timedelta(days=7 * lag))
                sev = None if v is None else 1000 * v / demo[c]["pop"]
                sev_rows.append([c, str(anchor), str(lag), f6(sev), "true" if sev is not None else "false"])
    for p in PERIOD_ORDER:
        a, b = PERIODS[p]
        er, origins = external_risk(a, b)
        for c in universe:
            risk_rows.append([c, str(a), str(b), f6(er.get(c, 0.0)), str(len(origins.get(c, ())))])
        for lag in LAGS:
            rows, excl = [], []
            for c in universe:
                if c not in demo:
                    excl.append((c, "missing_demographics"))
                    continue
                e = er.get(c, 0.0)
                if e <= 0:
                    excl.append((c, "zero_er"))
                    continue
                v = cum(c, b + dt.timedelta(days=7 * lag))
                if v is None:
                    excl.append((c, "severity_unavailable"))
                    continue
                sev = 1000 * v / demo[c]["pop"]
                if sev <= 0:
                    excl.append((c, "zero_severity"))
                    continue
                rows.append((c, e, sev))
            scen = f"{p}_lag{lag}"
            if len(rows) < 10:
                fits.append([p, str(lag)] + [""] * 7 + ["", "", "insufficient_sample"])
                imp[(p, lag)] = [p, str(lag), "", "", "", "insufficient_sample"]
                continue
            inc = [demo[c]["income"] for c, _, _ in rows]
            m = sum(inc) / len(inc)
            sd = math.sqrt(sum((v - m) ** 2 for v in inc) / (len(inc) - 1))
            design = []
            for c, e, sev in rows:
                dm = demo[c]
                design.append((c, e, sev, math.log10(e), dm["age65"], dm["male"], dm["afri"], dm["income"], (dm["income"] - m) / sd, math.log10(sev)))
            y = [r[9] for r in design]
            cols = [[r[k] for r in design] for k in (3, 4, 5, 6, 8)]
            coef, r2 = solve_normal(cols, y)
            _, r2_ir = solve_normal(cols[1:], y)
            gamma, alpha, *beta = [float(c) for c in coef]
            fits.append(
                [p, str(lag), f6(alpha)] + [f6(b_) for b_ in beta] + [f6(gamma), f6(r2), str(len(rows)), str(len(excl)), "ok"]
            )
            imp[(p, lag)] = [p, str(lag), f6(r2), f6(r2_ir), f6(r2 - r2_ir), "ok"]
            out = [[r[0], "included"] + [f6(v) for v in r[1:]] for r in design]
            out += [[c, reason] + [""] * 9 for c, reason in excl]
            out.sort(key=lambda r: r[0])
            write(
                f"design_{scen}.csv",
                ["fips", "status", "er", "severity", "log10_er", "age65", "male", "afri", "income", "income_std", "log10_severity"],
                out,
            )
    write("external_risk.csv", ["fips", "window_start", "window_end", "er", "n_origins"], risk_rows)
    write("severity.csv", ["fips", "anchor", "lag_weeks", "severity", "available"], sev_rows)
    write(
        "fits.csv",
        ["period", "lag_weeks", "alpha", "beta_age", "beta_male", "beta_afri", "beta_inc", "gamma", "r2", "n", "n_excluded", "status"],
        fits,
    )
    write(
        "importance.csv",
        ["period", "lag_weeks", "r2_full", "r2_ir_only", "delta", "status"],
        [imp[(p, lag)] for p in IMPORTANCE_ORDER for lag in LAGS],
    )


if __name__ == "__main__":
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for old in GOLDEN.glob("*.csv"):
        old.unlink()
    analyze()
    correlate()
    fit()

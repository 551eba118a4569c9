"""Regenerate the bundled driving-cycle tables.

udds.csv  : EPA Urban Dynamometer Driving Schedule, 1 Hz, m/s
            (source table: fastsim 2.1.1 resources/cycles/udds.csv).
ftp75.csv : FTP-75 without the 10 minute hot soak: full UDDS followed by a
            repeat of the first 505 s (hot-start phase).
nedc.csv  : 4 x ECE-15 + EUDC built from the UN-ECE R83 segment tables,
            linear between breakpoints, 1 Hz, km/h converted to m/s.
engine_map.csv : synthetic Willans-style engine efficiency curve.

Usage: python3 build_cycles.py <raw-udds.csv>
"""
import csv
import sys

KMH = 1.0 / 3.6


def write(path, rows):
    with open(path, "w", newline="\n") as f:
        f.write("time,speed\n")
        for t, v in rows:
            f.write(f"{t},{v:.9g}\n")


# (duration s, end speed km/h); start speed is the previous end speed
ECE15 = [
    (11, 0), (4, 15), (8, 15), (2, 10), (3, 0), (21, 0), (5, 15), (2, 15),
    (5, 32), (24, 32), (8, 10), (3, 0), (21, 0), (5, 15), (2, 15), (9, 35),
    (2, 35), (8, 50), (12, 50), (8, 35), (13, 35), (2, 32), (7, 10), (3, 0),
    (7, 0),
]
EUDC = [
    (20, 0), (5, 15), (2, 15), (9, 35), (2, 35), (8, 50), (2, 50), (13, 70),
    (50, 70), (8, 50), (69, 50), (13, 70), (50, 70), (35, 100), (30, 100),
    (20, 120), (10, 120), (16, 80), (8, 50), (10, 0), (20, 0),
]


def expand(segments):
    pts = [(0, 0.0)]
    for dur, v_end in segments:
        t0, v0 = pts[-1]
        for k in range(1, dur + 1):
            pts.append((t0 + k, v0 + (v_end - v0) * k / dur))
    return pts


def main(raw):
    rows = list(csv.reader(open(raw)))[1:]
    udds = [(int(float(r[0])), float(r[1])) for r in rows]
    write("udds.csv", udds)

    n = len(udds)
    hot = [(n - 1 + t, v) for t, v in udds[1 : 505 + 1]]
    write("ftp75.csv", udds + hot)

    ece = expand(ECE15)
    assert ece[-1][0] == 195
    ext = [(0, 0.0)]
    for _ in range(4):
        t0 = ext[-1][0]
        ext += [(t0 + t, v) for t, v in ece[1:]]
    t0 = ext[-1][0]
    ext += [(t0 + t, v) for t, v in expand(EUDC)[1:]]
    assert ext[-1][0] == 1180
    write("nedc.csv", [(t, v * KMH) for t, v in ext])

    with open("engine_map.csv", "w", newline="\n") as f:
        f.write("power_w,efficiency\n")
        for p, e in [(0, 0.10), (5000, 0.25), (20000, 0.34), (40000, 0.36), (56000, 0.33)]:
            f.write(f"{p},{e}\n")


if __name__ == "__main__":
    main(sys.argv[1])

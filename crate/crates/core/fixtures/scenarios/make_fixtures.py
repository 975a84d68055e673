"""Writes the scenario fixtures and their expected min PETs.

Expected values are computed at 60 Hz with shapely polygons, independently of
the Rust code: for every ordered pair and every lagger instant T2 (skipping
instants where the two boxes touch at T2 itself), take the latest leader
instant T1 in [T2 - pet_max, T2) whose box touches the lagger's box, and keep
the smallest T2 - T1. The tolerance is one 3 Hz step.

Run from this directory: python3 make_fixtures.py
"""

import json
import math

import numpy as np
import shapely
from shapely.geometry import Polygon

FINE_RATE = 60.0
PET_MAX = 5.0
TOL = round(1.0 / 3.0, 6)
FPS = 30.0  # ft/s used by most scripted vehicles
MPH = FPS * 3600 / 5280


def wp(t, x, y, heading, speed=MPH):
    return {"t": t, "x": x, "y": y, "heading": heading, "speed": speed}


def veh(vid, waypoints, length=15.0, width=6.0, lane=1):
    return {"id": vid, "length": length, "width": width, "lane": lane, "waypoints": waypoints}


def line(vid, start, heading, t0, t1, speed_fps=FPS, lane=1, length=15.0, width=6.0):
    """Straight constant-speed run from `start` at t0 to t1."""
    h = math.radians(heading)
    d = speed_fps * (t1 - t0)
    end = (start[0] + d * math.sin(h), start[1] + d * math.cos(h))
    mph = speed_fps * 3600 / 5280
    return veh(vid, [wp(t0, *start, heading, mph), wp(t1, *end, heading, mph)], length, width, lane)


def lerp_heading(a, b, f):
    d = (b - a + 540.0) % 360.0 - 180.0
    return (a + f * d) % 360.0


def sample(v, rate):
    w = v["waypoints"]
    k0 = math.ceil(w[0]["t"] * rate - 1e-9)
    k1 = math.floor(w[-1]["t"] * rate + 1e-9)
    out = []
    seg = 0
    for k in range(k0, k1 + 1):
        t = k / rate
        while seg + 2 < len(w) and t > w[seg + 1]["t"]:
            seg += 1
        a, b = (w[0], w[0]) if len(w) == 1 else (w[seg], w[seg + 1])
        f = min(max((t - a["t"]) / (b["t"] - a["t"]), 0.0), 1.0) if b["t"] > a["t"] else 0.0
        x = a["x"] + f * (b["x"] - a["x"])
        y = a["y"] + f * (b["y"] - a["y"])
        h = lerp_heading(a["heading"], b["heading"], f)
        out.append((k, footprint(x, y, v["length"], v["width"], h)))
    return out


def footprint(x, y, length, width, heading):
    # local frame: +v forward, +u right; heading clockwise from north
    r = math.radians(heading)
    fwd = np.array([math.sin(r), math.cos(r)])
    right = np.array([math.cos(r), -math.sin(r)])
    c = np.array([x, y])
    pts = [c + s * fwd * length / 2 + q * right * width / 2 for s, q in ((1, 1), (1, -1), (-1, -1), (-1, 1))]
    return Polygon(pts)


def min_pets(scn, rate=FINE_RATE):
    tracks = {v["id"]: sample(v, rate) for v in scn["vehicles"]}
    window = int(math.floor(PET_MAX * rate + 1e-9))
    result = {}
    overlaps = 0
    for lid, lead in tracks.items():
        lead_k = {k: p for k, p in lead}
        for gid, lag in tracks.items():
            if lid == gid:
                continue
            best = None
            for k2, p2 in lag:
                same = lead_k.get(k2)
                if same is not None and shapely.intersects(same, p2):
                    overlaps += 1
                    continue
                ks = [k for k in range(k2 - window, k2) if k in lead_k]
                if not ks:
                    continue
                hits = shapely.intersects(np.array([lead_k[k] for k in ks], dtype=object), p2)
                idx = np.nonzero(hits)[0]
                if len(idx):
                    pet = (k2 - ks[idx[-1]]) / rate
                    best = pet if best is None else min(best, pet)
            if best is not None:
                result[(lid, gid)] = best
    return result, overlaps


def scenarios():
    s = []
    s.append(("01_following", "Follower 1.5 s behind the leader on the same eastbound path.",
              [line(1, (-150, 0), 90, 0, 10), line(2, (-150, 0), 90, 1.5, 11.5)]))
    s.append(("02_perpendicular_crossing", "Eastbound vehicle crosses the origin at t=10, northbound at t=12.",
              [line(1, (-150, 0), 90, 5, 15), line(2, (0, -210), 0, 5, 15, lane=2)]))
    # left turn: eastbound approach then a quarter arc to northbound, against a westbound through vehicle
    turn = [wp(0, -120, -6, 90)]
    for i in range(0, 10):
        a = math.radians(90 * i / 9)
        turn.append(wp(4 + 2.5 * i / 9, -6 + 24 * math.sin(a) - 0.0, -6 + 24 * (1 - math.cos(a)), 90 - 90 * i / 9))
    turn.append(wp(9.5, 18, 80, 0))
    s.append(("03_left_turn_across_path", "Left-turning vehicle clears the conflict area ahead of an opposing through vehicle.",
              [veh(1, turn, lane=3), line(2, (150, 6), 270, 3.5, 13.5, lane=4)]))
    s.append(("04_platoon", "Three vehicles on one path with 1.2 s and 1.8 s headways.",
              [line(1, (-150, 0), 90, 0, 10), line(2, (-150, 0), 90, 1.2, 11.2), line(3, (-150, 0), 90, 3.0, 13.0)]))
    s.append(("05_parallel_lanes", "Side-by-side vehicles in lanes 12 ft apart; no conflict.",
              [line(1, (-150, 0), 90, 0, 10), line(2, (-150, 12), 90, 0.5, 10.5, lane=2)]))
    s.append(("06_time_separated", "Perpendicular paths crossed 8 s apart; beyond the PET ceiling.",
              [line(1, (-150, 0), 90, 0, 10), line(2, (0, -90), 0, 10, 16, lane=2)]))
    # leader's track ends with its front 7.5 ft past x=0; lagger passes northbound at x=10
    s.append(("07_grazing", "Corner graze: boxes overlap by 0.5 ft while centres stay at least 10 ft apart.",
              [line(1, (-150, 0), 90, 5, 10), line(2, (10, -90), 0, 8, 14, lane=2)]))
    s.append(("08_identical_path", "Follower 2.68 s behind on an identical path.",
              [line(1, (-150, 0), 90, 0, 10), line(2, (-150, 0), 90, 2.68, 12.68)]))
    s.append(("09_diagonal_crossing", "North-east and north-west bound vehicles cross 1.7 s apart.",
              [line(1, (-100, -100), 45, 0, 9.43), line(2, (100 + 30 * 1.7 / math.sqrt(2), -100 - 30 * 1.7 / math.sqrt(2)), 315, 0, 11.13, lane=2)]))
    # queue: two vehicles stop 20 ft apart at a stop line, then discharge
    q1 = [wp(0, -200, 0, 90), wp(5, -50, 0, 90, 0.5), wp(9, -50 + 1e-3, 0, 90, 0.0), wp(14, 100, 0, 90)]
    q2 = [wp(1, -250, 0, 90), wp(6, -70, 0, 90, 0.5), wp(11, -70 + 1e-3, 0, 90, 0.0), wp(16, 80, 0, 90)]
    s.append(("10_queue_discharge", "Queued vehicles stop one behind the other and discharge 2 s apart.",
              [veh(1, q1), veh(2, q2)]))
    s.append(("11_opposing_through", "Opposing through movements in separate lanes; no conflict.",
              [line(1, (-150, -6), 90, 0, 10), line(2, (150, 6), 270, 0, 10, lane=2)]))
    s.append(("12_truck_and_car_crossing", "Long truck crosses ahead of a car on a perpendicular path.",
              [line(1, (-150, 0), 90, 0, 10, length=45.0, width=8.5), line(2, (0, -120), 0, 3, 13, lane=2)]))
    return s


def main():
    for sid, desc, vehicles in scenarios():
        scn = {"id": sid, "description": desc, "rate": 3.0, "pet_max": PET_MAX, "vehicles": vehicles}
        mins, overlaps = min_pets(scn)
        coarse, _ = min_pets(scn, 3.0)
        # design check: the scripted value must survive 3 Hz sampling
        assert overlaps == 0, f"{sid}: boxes touch at the same instant"
        assert coarse.keys() == mins.keys(), f"{sid}: {coarse} vs {mins}"
        for k in mins:
            assert abs(coarse[k] - mins[k]) <= TOL + 1e-9, f"{sid} {k}: 3 Hz {coarse[k]} vs {mins[k]}"
        scn["expected"] = [
            {"leader": a, "lagger": b, "min_pet": round(p, 6), "tol": TOL} for (a, b), p in sorted(mins.items())
        ]
        scn["exhaustive"] = True
        with open(f"{sid}.json", "w") as f:
            json.dump(scn, f, indent=2)
            f.write("\n")
        print(sid, {k: round(v, 3) for k, v in mins.items()}, "overlap instants:", overlaps)


if __name__ == "__main__":
    main()

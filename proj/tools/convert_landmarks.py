#!/usr/bin/env python3
"""Convert per-point landmark annotations into <shot>.landmarks.jsonl files.

Input is a CSV with a header row and the columns
    shot, frame, landmark, x, y[, visible]
one row per annotated point. `landmark` is either an id in 1..19 or one of
the names below; `visible` is 0/1 and defaults to 1. Annotation exports
that list points per frame in a fixed order map onto this by writing one
row per (frame, position) with the position's name.

Frames are 0-based. Coordinates are pixels with the origin at the top-left
corner of the top-left pixel, so the center of pixel (row r, col c) is
(c + 0.5, r + 0.5). Shift exports that use pixel-center coordinates by 0.5.

The output files go next to the manifest; add
    "landmarks": "<shot>.landmarks.jsonl"
to each shot entry.
"""

import argparse
import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

NAMES = [
    "nose", "left_eye", "right_eye", "forehead", "throat",
    "withers", "mid_back", "tail_base", "tail_tip", "chest",
    "belly", "front_left_knee", "front_left_paw", "front_right_knee", "front_right_paw",
    "back_left_knee", "back_left_paw", "back_right_knee", "back_right_paw",
]
ID_OF = {name: k + 1 for k, name in enumerate(NAMES)}


def landmark_id(text, where):
    text = text.strip()
    if text.isdigit():
        lid = int(text)
        if 1 <= lid <= len(NAMES):
            return lid
    elif text in ID_OF:
        return ID_OF[text]
    sys.exit(f"{where}: unknown landmark '{text}'")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv", type=Path, help="annotation CSV")
    ap.add_argument("--out-dir", type=Path, default=Path("."), help="directory for the .landmarks.jsonl files")
    args = ap.parse_args()

    frames = defaultdict(lambda: defaultdict(dict))  # shot -> frame -> id -> ([x, y], visible)
    with args.csv.open(newline="") as f:
        for line, row in enumerate(csv.DictReader(f), start=2):
            where = f"{args.csv}:{line}"
            try:
                shot, frame = row["shot"], int(row["frame"])
                x, y = float(row["x"]), float(row["y"])
            except (KeyError, TypeError, ValueError) as e:
                sys.exit(f"{where}: bad row ({e})")
            visible = row.get("visible") in (None, "", "1", "true", "True")
            frames[shot][frame][landmark_id(row["landmark"], where)] = ([x, y], visible)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for shot, by_frame in sorted(frames.items()):
        path = args.out_dir / f"{shot}.landmarks.jsonl"
        with path.open("w") as out:
            for frame in sorted(by_frame):
                pts = by_frame[frame]
                rec = {
                    "shot": shot,
                    "frame": frame,
                    "points": {str(i): p for i, (p, _) in sorted(pts.items())},
                    "visible": [i for i, (_, v) in sorted(pts.items()) if v],
                }
                out.write(json.dumps(rec) + "\n")
        print(path)


if __name__ == "__main__":
    main()

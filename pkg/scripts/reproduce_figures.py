"""Run every subcommand against the canonical configuration.

    python3 scripts/reproduce_figures.py [--out out] [--mode mc|cf] [--workers N]

Each figure-style dataset lands in its own subdirectory of --out.
"""

import argparse
import csv
import sys
from pathlib import Path

from spinecho.cli import EXIT_OK, run

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "canonical.toml"

STEPS = [
    ("rabi", ["rabi"]),
    ("dephase", ["dephase"]),
    ("echo_scan", ["echo-scan"]),
    ("ratio_scan", ["ratio-scan"]),
    ("noise_map", ["noise-map"]),
    ("schedule", ["schedule"]),
    ("g2_echo_off", ["g2-curve", "--echo", "off"]),
    ("g2_echo_on", ["g2-curve", "--echo", "on"]),
]


def extract_xy(src: Path, dst: Path, x: str, y: str) -> None:
    rows = [ln for ln in src.read_text().splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(rows)
    with dst.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([x, y])
        for r in reader:
            w.writerow([r[x], r[y]])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="out")
    ap.add_argument("--mode", choices=("mc", "cf"), default="cf")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    common = ["--config", str(CONFIG), "--workers", str(args.workers)]
    failures = []
    for name, argv in STEPS:
        mode = ["--mode", args.mode] if name not in ("rabi", "schedule", "noise_map") else []
        code = run(argv + common + mode + ["--out", str(out / name)])
        print(f"{name}: exit {code}")
        if code != EXIT_OK:
            failures.append(name)
    # standalone refit of the dephasing curve through the fit subcommand
    dephase = out / "dephase" / "dephase.csv"
    if dephase.exists():
        xy = out / "dephase" / "dephase_xy.csv"
        extract_xy(dephase, xy, "T_us", "eta")
        code = run(["fit", "--input", str(xy), "--model", "gaussian", "--baseline", "0", "--out", str(out / "fit")])
        print(f"fit: exit {code}")
        if code != EXIT_OK:
            failures.append("fit")
    if failures:
        print(f"failed: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Convert a MATPOWER ``.m`` case into the line-oriented case format.

    python tools/matpower_to_case.py data/case14.m data/ieee14.case

Series admittance is ``1 / (r + jx)``; the line charging ``b`` is split in
half to each end. Transformer taps, phase shifters and bus shunts are
dropped. Bus injections are ``(sum(Pg) - Pd, sum(Qg) - Qd) / baseMVA``
using in-service generators.
"""

from __future__ import annotations

import argparse
import re
import sys


def _matrix(text: str, name: str) -> list[list[float]]:
    m = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S)
    if m is None:
        raise SystemExit(f"mpc.{name} not found")
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%", 1)[0].replace(";", " ").strip()
        if line:
            rows.append([float(tok) for tok in line.split()])
    return rows


def convert(text: str) -> str:
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([\d.]+)", text).group(1))
    bus = _matrix(text, "bus")
    gen = _matrix(text, "gen")
    branch = _matrix(text, "branch")

    pg: dict[int, float] = {}
    qg: dict[int, float] = {}
    for row in gen:
        if len(row) > 7 and row[7] <= 0:
            continue
        b = int(row[0])
        pg[b] = pg.get(b, 0.0) + row[1]
        qg[b] = qg.get(b, 0.0) + row[2]

    out = ["# converted from MATPOWER data; taps and bus shunts dropped", "BUS"]
    for row in bus:
        b = int(row[0])
        slack = int(row[1] == 3)
        p = (pg.get(b, 0.0) - row[2]) / base
        q = (qg.get(b, 0.0) - row[3]) / base
        out.append(f"{b} {slack} {p:.17g} {q:.17g}")
    out.append("BRANCH")
    for row in branch:
        if len(row) > 10 and row[10] <= 0:
            continue
        f, t, r, x, bc = int(row[0]), int(row[1]), row[2], row[3], row[4]
        d = r * r + x * x
        out.append(f"{f} {t} {r / d:.17g} {-x / d:.17g} {bc / 2:.17g}")
    return "\n".join(out) + "\n"


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source")
    ap.add_argument("dest", nargs="?")
    args = ap.parse_args(argv)
    with open(args.source, encoding="utf-8") as fh:
        result = convert(fh.read())
    if args.dest:
        with open(args.dest, "w", encoding="utf-8") as fh:
            fh.write(result)
    else:
        sys.stdout.write(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())

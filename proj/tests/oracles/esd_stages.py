"""Exact ESD stage table for r = 2^(-1/2), ell = 6, computed symbolically.

For each post-warmup horizon T the constant phase is [0, floor((1 - r^ell) T)];
stage i >= ell + 1 exists while r^(i-1) T >= 1 and covers
(floor((1 - r^(i-1)) T), floor((1 - r^i) T)], the last stage extended to T.
Writes tests/fixtures/esd_stages.tsv:  T  i  first_step  last_step

    python3 tests/oracles/esd_stages.py
"""
import pathlib

import sympy as sp

OUT = pathlib.Path(__file__).resolve().parents[1] / "fixtures" / "esd_stages.tsv"
R = 1 / sp.sqrt(2)
ELL = 6
HORIZONS = [10000, 21620, 54050]  # 23000 and 57500 overall steps minus 6% warmup


def boundary(i, T):
    return int(sp.floor((1 - R**i) * T))


def main():
    rows = ["T\ti\tfirst_step\tlast_step"]
    for T in HORIZONS:
        rows.append(f"{T}\t{ELL}\t0\t{boundary(ELL, T)}")
        i = ELL + 1
        stages = []
        while sp.simplify(R ** (i - 1) * T - 1) >= 0:
            stages.append([i, boundary(i - 1, T) + 1, boundary(i, T)])
            i += 1
        stages[-1][2] = T
        rows += [f"{T}\t{a}\t{b}\t{c}" for a, b, c in stages]
    OUT.write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()

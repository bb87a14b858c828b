"""Stand-in external solver: reads an LP file, enumerates, writes ``name value`` lines.

Usage: python3 lp_enumerator.py MODEL.lp SOLUTION.sol

Only understands the subset the package writes. It rebuilds the
coefficients from the text, so it checks the file as well as the solve.
"""
import itertools
import re
import sys


def parse(path):
    coef = {}          # (t, h) -> {(i, j): c}
    binaries = []
    section = None
    for raw in open(path):
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line in ("Maximize", "Subject To", "Bounds", "Binaries", "End"):
            section = line
            continue
        if section == "Subject To" and line.startswith("c_"):
            name, body = line.split(":", 1)
            _, t, h = name.split("_")
            row = coef.setdefault((int(t), int(h)), {})
            for sign, val, i, j in re.findall(r"([+-]?)\s*([0-9.eE+-]+)\s+b_(\d+)_(\d+)", body):
                row[(int(i), int(j))] = float(val) * (-1.0 if sign == "-" else 1.0)
        elif section == "Binaries":
            binaries.extend(line.split())
    n = max(int(b.split("_")[1]) for b in binaries)
    k = max(int(b.split("_")[2]) for b in binaries)
    return coef, n, k


def main(lp, sol):
    coef, n, k = parse(lp)
    scen = sorted({t for t, _ in coef})
    slots = sorted({h for _, h in coef})
    best, best_a = None, None
    for a in itertools.product(range(1, k + 1), repeat=n):
        val = 0.0
        for t in scen:
            val += min(sum(coef[(t, h)].get((i + 1, a[i]), 0.0) for i in range(n)) for h in slots)
        val /= len(scen)
        if best is None or val > best + 1e-9 * max(1.0, abs(best)):
            best, best_a = val, a
    with open(sol, "w") as fh:
        fh.write(f"obj {best!r}\n")
        for i in range(n):
            for j in range(1, k + 1):
                fh.write(f"b_{i + 1}_{j} {1 if best_a[i] == j else 0}\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

#!/usr/bin/env python3
"""Quadratic vs linear attention cost, measured three ways: exact score
counts, wall time over a doubling ladder, and peak live tensor memory.

Writes scaling.csv next to this script; pass --full for the 256..4096 ladder
(the default here is trimmed to stay quick).
"""

import sys
from pathlib import Path

from s2t_longformer.benchmark import run_scaling, write_scaling_csv

ladder = (256, 512, 1024, 2048, 4096) if "--full" in sys.argv else (128, 256, 512, 1024)
report = run_scaling(n_ladder=ladder, w=48, repeats=3)

print(report.summary_text())
print("A slope near 2 is quadratic; near 1 is linear. The score-evaluation")
print("column is exact arithmetic, the timings corroborate it.")

rows = {(r.pattern, r.n): r for r in report.rows}
first, last = ladder[0], ladder[-1]
factor = last / first
for pattern in ("dense", "sliding"):
    a, b = rows[(pattern, first)], rows[(pattern, last)]
    print(f"{pattern}: n grew {factor:.0f}x -> score evals grew {b.score_evals / a.score_evals:.1f}x, "
          f"peak bytes grew {b.peak_bytes / a.peak_bytes:.1f}x")

out = Path(__file__).with_name("scaling.csv")
write_scaling_csv(report, out)
print(f"\nwrote {out}")

"""Binomial margins over 1611 items, recomputed from the printed rates.

Most printed margins match to the hundredth. A handful do not, and the
script lists them so the discrepancy stays visible.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from reported_margins import N_ITEMS, ROWS  # noqa: E402

from crm.metrics import standard_error  # noqa: E402

for table, model, metric, p, se in ROWS:
    got = 100 * standard_error(p / 100, N_ITEMS)
    mark = "" if abs(got - se) <= 0.01 + 1e-9 else "   <-- differs"
    print(f"{table:<17} {model:<30} {metric:<16} {p:6.2f}%  printed {se:.2f}  recomputed {got:.3f}{mark}")

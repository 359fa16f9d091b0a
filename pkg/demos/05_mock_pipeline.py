"""Full pipeline on the six-item mock bundle, driven through the CLI.

validate, three generation runs, two scoring passes, then the report.
Everything lands in a temporary store unless a directory is given.

    python3 demos/05_mock_pipeline.py [store_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from crm.fixtures import bundle_dir, run_pipeline


def main(store: Path) -> None:
    report = run_pipeline(bundle_dir(), store)
    print(report)
    expected = (bundle_dir() / "expected_report_responses.md").read_text(encoding="utf-8")
    print("matches the committed expected report:", report == expected)


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))

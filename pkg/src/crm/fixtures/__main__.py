"""Regenerate the packaged mock bundle and its expected reports."""

import sys
import tempfile
from pathlib import Path

from . import bundle_dir, build_bundle, run_pipeline

out = Path(sys.argv[1]) if len(sys.argv) > 1 else bundle_dir()
build_bundle(out)
for variant in ("responses", "identical", "scrambled"):
    with tempfile.TemporaryDirectory() as tmp:
        report = run_pipeline(out, Path(tmp), variant)
    (out / f"expected_report_{variant}.md").write_text(report, encoding="utf-8")
print(f"bundle written to {out}")

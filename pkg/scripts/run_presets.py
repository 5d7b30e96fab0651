"""Run the committed experiment presets.

Manifest-driven and resumable: a preset whose <stem>.json already exists in
the output directory is skipped.

Usage:
  python scripts/run_presets.py --plan                    # print the resolved manifest
  python scripts/run_presets.py --limit N                 # run the first N pending presets
  python scripts/run_presets.py --only 'c06_*'            # glob filter on preset names
  python scripts/run_presets.py --check-determinism       # 1 vs 8 workers, compare outputs (wall time aside)

Outputs: <out>/<preset name>.csv and .json (same layout as `branchlln run --out`).
"""
from __future__ import annotations

import argparse
import filecmp
import fnmatch
import logging
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import config
from core.errors import BranchError
from core.experiment import load_config, run_experiment
from core.results import deterministic_view, emit

OUTPUT_DIR = config.OUTPUT_DIR / "presets"
PRESET_SUFFIXES = (".json", ".json5", ".cfg")


def build_manifest(presets_dir: Path, only: str | None = None) -> list[Path]:
    manifest = sorted(p for p in presets_dir.iterdir() if p.suffix in PRESET_SUFFIXES)
    if only:
        manifest = [p for p in manifest if fnmatch.fnmatch(p.stem, only)]
    return manifest


def run_one(preset: Path, stem: Path, workers: int) -> None:
    cfg = load_config(preset)
    started = time.perf_counter()
    result = run_experiment(cfg, workers=workers)
    emit(result, cfg.echo(), stem, wall_time=time.perf_counter() - started)


def outputs_identical(preset: Path, workers: tuple[int, int] = (1, 8)) -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        stems = [Path(tmp) / f"w{w}" / preset.stem for w in workers]
        for w, stem in zip(workers, stems):
            run_one(preset, stem, w)
        a, b = stems
        return (filecmp.cmp(a.with_suffix(".csv"), b.with_suffix(".csv"), shallow=False)
                and deterministic_view(a.with_suffix(".json")) == deterministic_view(b.with_suffix(".json")))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--plan", action="store_true", help="print resolved manifest and exit")
    ap.add_argument("--limit", type=int, default=0, help="max presets to run")
    ap.add_argument("--only", help="glob on preset names, e.g. 'c09_*'")
    ap.add_argument("--workers", type=int, default=config.WORKERS)
    ap.add_argument("--out", type=Path, default=OUTPUT_DIR)
    ap.add_argument("--check-determinism", action="store_true", help="run each preset with 1 and 8 workers")
    args = ap.parse_args()
    logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s %(message)s", level=logging.WARNING)

    manifest = build_manifest(config.PRESETS_DIR, args.only)
    if args.plan:
        print(f"Manifest: {len(manifest)} presets")
        for p in manifest:
            print(f"  {p.name}")
        return 0

    if args.check_determinism:
        mismatched = []
        for p in manifest[: args.limit or None]:
            same = outputs_identical(p)
            print(f"[{'OK' if same else 'DIFF'}] {p.name}")
            if not same:
                mismatched.append(p.name)
        print(f"\nDone. identical={len(manifest[: args.limit or None]) - len(mismatched)} differing={len(mismatched)}")
        return 1 if mismatched else 0

    args.out.mkdir(parents=True, exist_ok=True)
    done = skipped = failed = 0
    for p in manifest:
        stem = args.out / p.stem
        if stem.with_suffix(".json").exists():
            skipped += 1
            continue
        try:
            run_one(p, stem, args.workers)
            print(f"[OK] {p.name} -> {stem.name}.csv")
            done += 1
        except BranchError as e:
            print(f"[FAIL] {p.name}: {e}", file=sys.stderr)
            failed += 1
        if args.limit and (done + skipped) >= args.limit:
            break
    print(f"\nDone. ran={done} skipped(existing)={skipped} failed={failed}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Run All Experiments - Acceptance Grid

This script runs, step by step:
1. Static l2 and lp heavy hitters (accuracy, variance, communication)
2. l2 heavy hitter tracking and exact threshold tracking
3. Static and tracked Fp
4. The k-scaling grid of two-round lp heavy hitters
5. A determinism check (same seed twice, byte-identical CSV)

Each step runs through the experiment_builder CLI and is then checked
against its acceptance thresholds from the saved CSV / JSON.

Use --quick for reduced trial counts (minutes instead of hours) and --yes
to skip the confirmation prompt.
"""

import filecmp
import math
import os
import subprocess
import sys
from pathlib import Path

from experiment_runner import (
    OUTPUT_DIR,
    ExperimentConfig,
    fit_from_reports,
    read_aggregate,
    read_trial_rows,
    run_identifier,
)

CLI = 'python3 archivesPY/experiment_builder.py'

# Thresholds of the acceptance checks
BIAS_SIGMAS = 4
VARIANCE_FACTOR = 0.4
MESSAGES_PER_SITE_FACTOR = 3.3
MIN_ITEM_COVERAGE = 0.6
MIN_FP_SUCCESS = 0.8
SCALING_RANGE = (1.6, 2.4)
TRACKING_LEDGER_FACTOR = 4


def print_header(text):
    """Print a formatted header"""
    print("\n" + "=" * 70)
    print(f"  {text}")
    print("=" * 70 + "\n")


def print_step(step_num, total_steps, text):
    """Print a formatted step"""
    print(f"📋 Step {step_num}/{total_steps}: {text}")


def run_command(cmd, description):
    """Run a command and handle errors"""
    print(f"   Running: {description}")
    try:
        result = subprocess.run(cmd, shell=True, check=True, capture_output=True, text=True)
        if result.stdout:
            for line in result.stdout.strip().split('\n'):
                print(f"   {line}")
        return True
    except subprocess.CalledProcessError as e:
        print(f"   ❌ Error: {e}")
        if e.stdout:
            for line in e.stdout.strip().split('\n')[-15:]:
                print(f"   {line}")
        if e.stderr:
            print(f"   {e.stderr}")
        return False


def cli_flags(config, out):
    flags = (
        f"--protocol {config.protocol} --k {config.k} --n {config.n} --p {config.p} "
        f"--eps {config.eps} --m {config.m} --alpha {config.alpha} --reps {config.reps} "
        f"--top {config.top} --trials {config.trials} --seed {config.seed} "
        f"--generator '{config.generator}' --checkpoints {config.checkpoints} --out {out}"
    )
    flags += " --fixed-stream" if config.fixed_stream else ""
    return flags + ("" if config.rescale else " --no-rescale")


def run_config(config, out, description):
    return run_command(f"{CLI} run {cli_flags(config, out)}", description)


def result_paths(config, out):
    stem = f"{config.protocol}_{run_identifier(config)}"
    return out / f"{stem}.csv", out / f"{stem}.json"


# ============================================================================
# ACCEPTANCE CHECKS
# ============================================================================
# Each check takes the per-trial frame and the config and returns a list of
# failure descriptions (empty when the step passes).

def well_sampled(frame, config):
    """(t, item) groups present in at least half of the trials"""
    sizes = frame.groupby(['t', 'item'])['trial'].transform('size')
    return frame[sizes >= config.trials / 2]


def check_l2_static(frame, config):
    failures = []
    trials = frame['trial'].nunique()
    for item, group in frame.groupby('item'):
        scale = group['bound'].iloc[0] ** 2  # eps²·F'2
        gap = abs(group['estimate'].mean() - group['exact'].iloc[0])
        if gap > BIAS_SIGMAS * math.sqrt(scale / (3 * trials)):
            failures.append(f"item {item}: mean off by {gap:.2f}")
        variance = group['estimate'].var(ddof=0)
        if variance > VARIANCE_FACTOR * scale:
            failures.append(f"item {item}: variance {variance:.1f} above {VARIANCE_FACTOR}·eps²·F'2")
    per_site = frame.groupby('trial')['messages'].first().mean() / config.k
    if per_site > MESSAGES_PER_SITE_FACTOR / config.eps ** 2:
        failures.append(f"{per_site:.1f} messages per site above {MESSAGES_PER_SITE_FACTOR}/eps²")
    return failures


def check_item_coverage(frame, config):
    coverage = well_sampled(frame, config).groupby(['t', 'item'])['covered'].mean()
    low = coverage[coverage < MIN_ITEM_COVERAGE]
    return [f"(t={t}, item={item}): coverage {value:.2f}" for (t, item), value in low.items()]


def check_fp_success(frame, config):
    rate = frame['covered'].mean()
    return [] if rate >= MIN_FP_SUCCESS else [f"success rate {rate:.2f} below {MIN_FP_SUCCESS}"]


def check_nothing(frame, config):
    return []


def acceptance_grid(quick):
    """(description, config, check) triples; --quick scales the trial counts down"""
    def trials(full, reduced):
        return reduced if quick else full

    return [
        ("l2 heavy hitters, unbiasedness, variance and messages",
         ExperimentConfig('l2hh_static', k=4, n=256, eps=0.3, m=10000, trials=trials(100000, 2000), top=10,
                          fixed_stream=True),
         check_l2_static),
        ("lp heavy hitters, two rounds on equal_split input",
         ExperimentConfig('lphh_two_round', k=4, n=256, p=3, eps=0.3, m=10000, generator='equal_split',
                          trials=trials(1000, 100), fixed_stream=True),
         check_item_coverage),
        ("l2 heavy hitter tracking",
         ExperimentConfig('l2hh_tracking', k=4, n=256, eps=0.3, m=20000, trials=trials(200, 20), top=5),
         check_item_coverage),
        ("exact threshold tracking",
         ExperimentConfig('threshold_tracker', k=4, n=256, m=10000, trials=trials(1000, 100)),
         check_nothing),
        ("static F2, two rounds",
         ExperimentConfig('fp_static', k=4, n=256, p=2, eps=0.3, m=10000, trials=trials(200, 20), reps=trials(0, 9)),
         check_fp_success),
        ("static F3, two rounds",
         ExperimentConfig('fp_static', k=4, n=256, p=3, eps=0.3, m=10000, trials=trials(200, 20), reps=trials(0, 9)),
         check_fp_success),
        ("F2 tracking",
         ExperimentConfig('fp_tracking', k=4, n=128, p=2, eps=0.35, m=20000, trials=trials(100, 5),
                          reps=trials(0, 5)),
         check_item_coverage),
        ("static F2 at the tracking parameters",
         ExperimentConfig('fp_static', k=4, n=128, p=2, eps=0.35, m=20000, trials=trials(100, 5),
                          reps=trials(0, 5)),
         check_nothing),
    ]


def check_tracking_ledger(out, tracking, static):
    """Fp tracking mean bits within a constant factor of static two-round Fp"""
    missing = [c.protocol for c in (tracking, static) if not result_paths(c, out)[1].exists()]
    if missing:
        return [f"no saved aggregate for {', '.join(missing)}"]
    tracked = read_aggregate(result_paths(tracking, out)[1])['aggregate']['mean_bits']
    one_shot = read_aggregate(result_paths(static, out)[1])['aggregate']['mean_bits']
    ratio = tracked / one_shot if one_shot else math.inf
    print(f"   📊 tracking / static ledger ratio: {ratio:.2f}")
    if ratio > TRACKING_LEDGER_FACTOR:
        return [f"tracking ledger {ratio:.2f}× the static one (limit {TRACKING_LEDGER_FACTOR}×)"]
    return []


def report_check(description, failures):
    if failures:
        print(f"   ❌ {description}: {len(failures)} acceptance failure(s)")
        for failure in failures[:10]:
            print(f"      - {failure}")
        return False
    print(f"   ✅ {description}: acceptance thresholds met")
    return True


def main():
    quick = '--quick' in sys.argv
    print_header("🔄 ACCEPTANCE GRID" + (" (quick)" if quick else ""))

    if not os.path.exists('archivesPY/experiment_builder.py'):
        print("❌ Error: Must run from project root directory")
        print("   (the directory containing experiment_runner.py)")
        sys.exit(1)

    out = Path(OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    grid = acceptance_grid(quick)
    scaling = [ExperimentConfig('lphh_two_round', k=k, n=256, p=3, eps=0.3, m=10000, trials=200 if not quick else 30)
               for k in (2, 4, 8)]

    print(f"✅ Output directory: {out}")
    print(f"   - {len(grid)} experiments, a 3-point k-scaling grid and a determinism check")
    if '--yes' not in sys.argv:
        response = input("\n   Continue? (yes/no): ").strip().lower()
        if response not in ['yes', 'y']:
            print("\n❌ Run cancelled by user")
            sys.exit(0)

    total_steps = len(grid) + 3
    failed = []

    for step, (description, config, check) in enumerate(grid, start=1):
        print_header(f"STEP {step}: {description.upper()}")
        print_step(step, total_steps, description)
        if not run_config(config, out, f"{config.protocol} × {config.trials} trials"):
            failed.append(description)
            continue
        frame = read_trial_rows(result_paths(config, out)[0])
        if not report_check(description, check(frame, config)):
            failed.append(description)

    step = len(grid) + 1
    print_header(f"STEP {step}: TRACKING VS STATIC LEDGER")
    print_step(step, total_steps, "F2 tracking bits against static two-round F2 bits")
    if not report_check("ledger comparison", check_tracking_ledger(out, grid[-2][1], grid[-1][1])):
        failed.append("tracking ledger")

    step = len(grid) + 2
    print_header(f"STEP {step}: COMMUNICATION SCALING IN k")
    print_step(step, total_steps, "lp heavy hitters at k = 2, 4, 8 (target exponent p−1 = 2)")
    scaling_ok = all(run_config(config, out, f"k = {config.k}") for config in scaling)
    if scaling_ok:
        exponent = fit_from_reports([result_paths(c, out)[1] for c in scaling], 'k')
        low, high = SCALING_RANGE
        print(f"   📊 mean bits ~ k^{exponent:.3f}")
        scaling_ok = report_check("k scaling", [] if low <= exponent <= high else
                                  [f"exponent {exponent:.3f} outside [{low}, {high}]"])
    if not scaling_ok:
        failed.append("k scaling")

    step = len(grid) + 3
    print_header(f"STEP {step}: DETERMINISM")
    print_step(step, total_steps, "rerunning one experiment with the same seed")
    config = grid[1][1]
    rerun_dir = out / 'rerun'
    rerun_dir.mkdir(exist_ok=True)
    name = result_paths(config, out)[0].name
    if run_config(config, rerun_dir, "rerun") and filecmp.cmp(out / name, rerun_dir / name, shallow=False):
        print(f"   ✅ {name} is byte-identical across runs")
    else:
        print(f"   ❌ {name} differs between runs")
        failed.append("determinism")

    if failed:
        print_header("⚠️  ACCEPTANCE GRID FINISHED WITH FAILURES")
        for description in failed:
            print(f"   - {description}")
        sys.exit(1)

    print_header("✅ ACCEPTANCE GRID COMPLETE!")
    print("🎯 Next Steps:")
    print(f"   1. Inspect per-trial rows: {out}/<protocol>_<run_id>.csv")
    print(f"   2. Recompute an aggregate: {CLI} report {out}/<protocol>_<run_id>.csv")


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\n\n❌ Run cancelled by user (Ctrl+C)")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)

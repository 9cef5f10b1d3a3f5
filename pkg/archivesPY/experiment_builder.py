#!/usr/bin/env python3
"""
Experiment Builder
Command-line front end for stream generation, protocol runs and reports
"""

import argparse
import os
import sys

# Add parent directory to path to import the protocol modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from experiment_runner import (
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    OUTPUT_DIR,
    PROTOCOLS,
    ExperimentConfig,
    fit_from_reports,
    recompute_report,
    run_experiment,
)
from frequency_core import ConfigError, ParameterError
from network_simulator import write_stream_file
from stream_generator import generate


def build_parser():
    parser = argparse.ArgumentParser(
        prog='experiment_builder.py',
        description='Distributed heavy hitter and frequency moment experiments',
        add_help=False,
    )
    commands = parser.add_subparsers(dest='command')

    def add_config_flags(sub):
        sub.add_argument('--protocol', default='l2hh_static')
        sub.add_argument('--k', type=int, default=4)
        sub.add_argument('--n', type=int, default=256)
        sub.add_argument('--p', type=int, default=2)
        sub.add_argument('--eps', type=float, default=0.3)
        sub.add_argument('--m', type=int, default=10000)
        sub.add_argument('--alpha', type=float, default=0.1)
        sub.add_argument('--reps', type=int, default=0)
        sub.add_argument('--top', type=int, default=10)
        sub.add_argument('--trials', type=int, default=DEFAULT_TRIALS)
        sub.add_argument('--seed', type=int, default=DEFAULT_SEED)
        sub.add_argument('--generator', default='zipf(1.1)')
        sub.add_argument('--checkpoints', type=int, default=20)
        sub.add_argument('--out', default=None)
        sub.add_argument('--fixed-stream', action='store_true')
        sub.add_argument('--no-rescale', dest='rescale', action='store_false')

    gen = commands.add_parser('gen', add_help=False)
    add_config_flags(gen)
    gen.add_argument('--trial', type=int, default=0)

    run = commands.add_parser('run', add_help=False)
    add_config_flags(run)
    run.add_argument('--workers', type=int, default=None)

    report = commands.add_parser('report', add_help=False)
    report.add_argument('paths', nargs='+')
    report.add_argument('--field', default=None)

    return parser


def config_from_args(args):
    return ExperimentConfig(
        protocol=args.protocol, k=args.k, n=args.n, p=args.p, eps=args.eps, m=args.m,
        generator=args.generator, trials=args.trials, seed=args.seed,
        checkpoints=args.checkpoints, alpha=args.alpha, reps=args.reps, top=args.top,
        fixed_stream=args.fixed_stream, rescale=args.rescale,
    ).validate()


def cmd_gen(args):
    """Write one trial's stream as a `time site item` file"""
    config = config_from_args(args)
    events = generate(config, args.trial)
    path = args.out or os.path.join(OUTPUT_DIR, f"stream_seed{config.seed}_trial{args.trial}.txt")
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    write_stream_file(path, events)
    print(f"✅ Wrote {len(events):,} events to {path}")
    return 0


def cmd_run(args):
    """Run an experiment and print its summary"""
    config = config_from_args(args)
    print("=" * 70)
    print(f"  {config.protocol}: k={config.k} n={config.n} p={config.p} eps={config.eps} m={config.m}")
    print(f"  generator={config.generator} trials={config.trials} seed={config.seed}")
    print("=" * 70)

    report = run_experiment(config, out_dir=args.out, workers=args.workers)
    aggregate = report.aggregate
    print(f"📊 Coverage rate:  {aggregate['coverage_rate']:.3f}")
    print(f"📊 Mean bits:      {aggregate['mean_bits']:,.0f}")
    print(f"📊 Mean messages:  {aggregate['mean_messages']:,.1f}")
    print(f"📊 Mean rounds:    {aggregate['mean_rounds']:.2f}")
    print(f"💾 Rows:      {report.csv_path}")
    print(f"💾 Aggregate: {report.json_path}")

    if report.hard_failures:
        print(f"\n❌ {len(report.hard_failures)} hard assertion failure(s):")
        for failure in report.hard_failures[:20]:
            print(f"   - {failure}")
    else:
        print("\n✅ All hard assertions passed")
    return report.exit_code


def cmd_report(args):
    """Recompute a run's aggregate, or fit a scaling exponent across runs"""
    if args.field:
        json_paths = [path if path.endswith('.json') else os.path.splitext(path)[0] + '.json' for path in args.paths]
        exponent = fit_from_reports(json_paths, args.field)
        axis = '1/eps' if args.field == 'eps' else args.field
        print(f"📊 mean bits ~ ({axis})^{exponent:.3f} over {len(json_paths)} runs")
        return 0

    status = 0
    for path in args.paths:
        matches, recomputed, stored = recompute_report(path)
        if stored is None:
            print(f"⚠️  {path}: no aggregate JSON next to the CSV")
            print(f"   Recomputed coverage rate {recomputed['coverage_rate']:.3f}")
            status = 1
        elif matches:
            print(f"✅ {path}: aggregate recomputed from rows matches the JSON "
                  f"(coverage {recomputed['coverage_rate']:.3f}, mean bits {recomputed['mean_bits']:,.0f})")
        else:
            print(f"❌ {path}: recomputed aggregate differs from the stored JSON")
            status = 1
    return status


def show_help():
    """Show help message"""
    print("Experiment Builder - Distributed Heavy Hitters and Frequency Moments")
    print("=" * 70)
    print()
    print("Usage: python3 experiment_builder.py [command] [flags]")
    print()
    print("Commands:")
    print("  gen     - Generate a stream file (time site item per line)")
    print("  run     - Run trials of a protocol; writes per-trial CSV and aggregate JSON")
    print("  report  - Recompute aggregates from CSV, or fit scaling with --field")
    print("  help    - Show this help message")
    print()
    print("Flags (gen / run):")
    print("  --protocol --k --n --p --eps --m --alpha --reps --top --trials --seed")
    print("  --generator --checkpoints --out --fixed-stream --no-rescale   (run also takes --workers)")
    print()
    print("Protocols:")
    for name, entry in sorted(PROTOCOLS.items()):
        print(f"  {name:<18} [{entry.kind}] {entry.description}")
    print()
    print("Generators: zipf(s), uniform, planted_hh(count,share), equal_split")
    print()
    print("Examples:")
    print("  python3 experiment_builder.py run --protocol l2hh_static --trials 1000")
    print("  python3 experiment_builder.py run --protocol lphh_two_round --p 3 --generator equal_split")
    print("  python3 experiment_builder.py report archivesCSV/l2hh_static_<run_id>.csv")
    print("  python3 experiment_builder.py report archivesCSV/lphh_two_round_*.json --field k")


def main(argv=None):
    """Main entry point for CLI"""
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] in ('help', '-h', '--help'):
        show_help()
        return 0

    commands = {'gen': cmd_gen, 'run': cmd_run, 'report': cmd_report}
    if argv[0] not in commands:
        print(f"❌ Unknown command: {argv[0]}")
        print()
        show_help()
        return 1

    args = build_parser().parse_args(argv)
    return commands[args.command](args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (ConfigError, ParameterError) as e:
        print(f"\n{e}")
        sys.exit(2)
    except KeyboardInterrupt:
        print("\n\n❌ Cancelled by user (Ctrl+C)")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)

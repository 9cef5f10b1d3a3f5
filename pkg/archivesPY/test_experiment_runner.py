#!/usr/bin/env python3
"""
Tests for the experiment harness and its command-line front end
"""

import filecmp
import json
from dataclasses import replace

import pandas as pd
import pytest

import experiment_builder
import experiment_runner
import run_all_experiments
from experiment_runner import (
    CSV_COLUMNS,
    CSV_VERSION,
    PROTOCOLS,
    ExperimentConfig,
    aggregate,
    checkpoint_times,
    fit_from_reports,
    fit_scaling_exponent,
    grid_axis,
    make_row,
    read_trial_rows,
    recompute_report,
    run_experiment,
    run_identifier,
    run_scaling_grid,
    run_trial,
    trial_stream,
)
from frequency_core import ConfigError
from stream_generator import generate
from tracking_heavy_hitters import L2HeavyHitterTracker, rescaled_eps


def small(protocol, **overrides):
    values = dict(protocol=protocol, k=3, n=16, p=2, eps=0.3, m=300, trials=2, seed=11, checkpoints=4, top=3)
    values.update(overrides)
    return ExperimentConfig(**values)


# ============================================================================
# CONFIGURATION
# ============================================================================

def test_default_config_is_valid():
    config = ExperimentConfig()
    assert config.validate() is config


@pytest.mark.parametrize('overrides', [
    {'protocol': 'nope'},
    {'k': 0},
    {'p': 1},
    {'eps': 1.2},
    {'alpha': 0},
    {'reps': 2},
    {'seed': -1},
    {'generator': 'zipf()'},
])
def test_invalid_configs_are_rejected(overrides):
    with pytest.raises(ConfigError):
        ExperimentConfig(**overrides).validate()


def test_run_identifier_is_stable():
    assert run_identifier(small('l2hh_static')) == run_identifier(small('l2hh_static'))
    assert run_identifier(small('l2hh_static')) != run_identifier(small('l2hh_static', seed=12))
    assert len(run_identifier(ExperimentConfig())) == 12


def test_checkpoint_times():
    assert checkpoint_times(100, 4) == [25, 50, 75, 100]
    assert checkpoint_times(3, 5) == [1, 2, 3]


def test_make_row():
    row = make_row(10, 2, 7.5, 10, 3.0)
    assert row['abs_error'] == 2.5
    assert row['rel_error'] == 0.25
    assert row['covered']
    assert not make_row(10, 2, 14, 10, 3.0)['covered']
    assert make_row(10, 2, 1, 0, 0.5)['rel_error'] == 1


def test_every_protocol_has_a_kind():
    assert {entry.kind for entry in PROTOCOLS.values()} == {'static', 'tracking'}
    assert len(PROTOCOLS) == 13


# ============================================================================
# TRIALS AND REPORTS
# ============================================================================

def test_all_send_regime_has_full_coverage(tmp_path):
    config = small('l2hh_static', n=1, generator='uniform', trials=1)
    report = run_experiment(config, out_dir=tmp_path)
    assert report.coverage_rate == 1.0
    assert report.exit_code == 0


def test_exact_forwarding_rows_and_files(tmp_path):
    config = small('exact_forwarding')
    report = run_experiment(config, out_dir=tmp_path)
    assert report.coverage_rate == 1.0
    assert list(report.rows.columns) == CSV_COLUMNS
    assert len(report.rows) == config.trials * 4 * config.top
    assert report.csv_path.read_text().startswith(f"# {CSV_VERSION}")
    saved = json.loads(report.json_path.read_text())
    assert saved['run_id'] == run_identifier(config)
    assert saved['config']['protocol'] == 'exact_forwarding'
    # one ledger message per arrival
    assert (read_trial_rows(report.csv_path)['messages'] == config.m).all()


def test_report_recomputes_from_rows(tmp_path):
    report = run_experiment(small('lphh_two_round', p=3), out_dir=tmp_path)
    matches, recomputed, stored = recompute_report(report.csv_path)
    assert matches
    assert recomputed['rows'] == len(report.rows)
    assert stored['trials'] == 2


def test_report_without_json(tmp_path):
    report = run_experiment(small('exact_forwarding', trials=1), out_dir=tmp_path)
    report.json_path.unlink()
    matches, _, stored = recompute_report(report.csv_path)
    assert not matches
    assert stored is None


def test_same_seed_gives_identical_files(tmp_path):
    config = small('l2hh_tracking', trials=2)
    first = run_experiment(config, out_dir=tmp_path / 'a')
    second = run_experiment(config, out_dir=tmp_path / 'b')
    assert filecmp.cmp(first.csv_path, second.csv_path, shallow=False)
    assert filecmp.cmp(first.json_path, second.json_path, shallow=False)


def test_worker_pool_matches_serial_run():
    config = small('exact_forwarding', trials=3)
    serial = run_experiment(config, workers=1, write=False)
    pooled = run_experiment(config, workers=2, write=False)
    assert serial.rows.equals(pooled.rows)


def test_threshold_tracker_trials_have_no_failures():
    report = run_experiment(small('threshold_tracker', trials=3), write=False)
    assert report.hard_failures == []
    assert report.coverage_rate == 1.0


def test_exact_cover_trials_have_no_failures():
    report = run_experiment(small('cover_two_round', alpha=0.1, reps=5), write=False)
    assert report.hard_failures == []


def test_trial_rows_carry_ledger_totals():
    rows, failures = run_trial(small('l2hh_static'), 0)
    assert failures == []
    assert len({(row['bits'], row['messages'], row['rounds']) for row in rows}) == 1
    assert rows[0]['rounds'] == 1


def test_aggregate_of_empty_frame():
    summary = aggregate(pd.DataFrame(columns=CSV_COLUMNS))
    assert summary['trials'] == 0
    assert summary['coverage_rate'] == 0.0


# ============================================================================
# SCALING FITS
# ============================================================================

def test_fit_scaling_exponent():
    assert fit_scaling_exponent([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        fit_scaling_exponent([1], [3])
    with pytest.raises(ConfigError):
        fit_scaling_exponent([1, 2], [0, 3])


def test_grid_axis():
    assert grid_axis('eps', 0.5) == 2
    assert grid_axis('k', 8) == 8


def test_fit_from_reports(tmp_path):
    paths = []
    for k, bits in ((2, 100.0), (4, 400.0), (8, 1600.0)):
        path = tmp_path / f"run_k{k}.json"
        path.write_text(json.dumps({'config': {'k': k}, 'aggregate': {'mean_bits': bits}}))
        paths.append(path)
    assert fit_from_reports(paths, 'k') == pytest.approx(2.0)


def test_forwarding_bits_grow_linearly_in_m():
    points, exponent = run_scaling_grid(small('exact_forwarding', trials=1), 'm', [100, 200, 400])
    assert [x for x, _ in points] == [100, 200, 400]
    assert exponent == pytest.approx(1.0)


# ============================================================================
# COMMAND LINE
# ============================================================================

def test_cli_help(capsys):
    assert experiment_builder.main(['help']) == 0
    assert 'Commands:' in capsys.readouterr().out


def test_cli_unknown_command(capsys):
    assert experiment_builder.main(['bogus']) == 1
    assert 'Unknown command' in capsys.readouterr().out


def test_cli_gen_writes_stream(tmp_path):
    path = tmp_path / 'stream.txt'
    code = experiment_builder.main(['gen', '--m', '50', '--n', '8', '--k', '2', '--out', str(path)])
    assert code == 0
    lines = path.read_text().splitlines()
    assert lines[0] == '# time site item'
    assert len(lines) == 51


def test_cli_run_then_report(tmp_path, capsys):
    flags = ['--protocol', 'exact_forwarding', '--n', '8', '--m', '100', '--trials', '1',
             '--checkpoints', '2', '--out', str(tmp_path)]
    assert experiment_builder.main(['run'] + flags) == 0
    csv_files = sorted(tmp_path.glob('exact_forwarding_*.csv'))
    assert len(csv_files) == 1
    assert experiment_builder.main(['report', str(csv_files[0])]) == 0
    assert 'matches the JSON' in capsys.readouterr().out


def test_cli_run_rejects_bad_config(tmp_path):
    with pytest.raises(ConfigError):
        experiment_builder.main(['run', '--protocol', 'nope', '--out', str(tmp_path)])


# ============================================================================
# FIXED STREAMS AND ACCEPTANCE CHECKS
# ============================================================================

def test_fixed_stream_replays_trial_zero():
    config = small('l2hh_static', fixed_stream=True)
    assert trial_stream(config, 3) == generate(config, 0)
    assert trial_stream(small('l2hh_static'), 3) == generate(small('l2hh_static'), 3)
    assert run_identifier(config) != run_identifier(small('l2hh_static'))


def test_fixed_stream_rows_share_exact_values():
    report = run_experiment(small('l2hh_static', fixed_stream=True, trials=3), write=False)
    assert report.rows.groupby('item')['exact'].nunique().max() == 1


def acceptance_frame(estimates, exact=10.0, bound=3.0, messages=8):
    return pd.DataFrame([
        dict(make_row(100, 0, value, exact, bound), trial=trial, bits=100, messages=messages, rounds=1)
        for trial, value in enumerate(estimates)
    ], columns=CSV_COLUMNS)


def test_l2_acceptance_check():
    config = small('l2hh_static', k=2, eps=0.5)
    assert run_all_experiments.check_l2_static(acceptance_frame([9.0, 11.0] * 50), config) == []
    biased = run_all_experiments.check_l2_static(acceptance_frame([12.0] * 100), config)
    assert any('mean off' in failure for failure in biased)
    noisy = run_all_experiments.check_l2_static(acceptance_frame([0.0, 20.0] * 50), config)
    assert any('variance' in failure for failure in noisy)
    chatty = run_all_experiments.check_l2_static(acceptance_frame([9.0, 11.0] * 50, messages=100), config)
    assert any('messages per site' in failure for failure in chatty)


def test_coverage_acceptance_check():
    config = small('lphh_two_round', trials=4)
    assert run_all_experiments.check_item_coverage(acceptance_frame([10, 11, 12, 13]), config) == []
    assert len(run_all_experiments.check_item_coverage(acceptance_frame([10, 20, 30, 40]), config)) == 1
    assert run_all_experiments.check_fp_success(acceptance_frame([10, 11, 12, 20]), config) == [
        'success rate 0.75 below 0.8'
    ]


# ============================================================================
# RESCALED TRACKING
# ============================================================================

def test_l2_tracking_trials_run_at_rescaled_eps(monkeypatch):
    built = []

    class RecordingTracker(L2HeavyHitterTracker):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, **kwargs)
            built.append(self)

    monkeypatch.setattr(experiment_runner, 'L2HeavyHitterTracker', RecordingTracker)
    config = small('l2hh_tracking', trials=1)
    run_trial(config, 0)
    run_trial(replace(config, rescale=False), 0)
    assert built[0].eps == rescaled_eps(config.eps, config.m)
    assert built[1].eps == config.eps


def test_no_rescale_flag():
    parser = experiment_builder.build_parser()
    assert experiment_builder.config_from_args(parser.parse_args(['run'])).rescale
    assert not experiment_builder.config_from_args(parser.parse_args(['run', '--no-rescale'])).rescale
    assert '--no-rescale' in run_all_experiments.cli_flags(small('l2hh_tracking', rescale=False), 'out')
    assert '--no-rescale' not in run_all_experiments.cli_flags(small('l2hh_tracking'), 'out')

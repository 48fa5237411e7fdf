"""superinfo CLI entry point."""
import sys
import argparse
import logging

from superinfo.config import ConfigError, ProbeConfig, RunConfig
from superinfo.formats import FormatError
from superinfo.info import DistributionError
from superinfo.losses import LossError
from superinfo.models import ModelError
from superinfo.parser import ParseError
from superinfo.tensor import TensorError
from superinfo.data import DataError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class _Formatter(logging.Formatter):
    def format(self, record):
        record.levelname = record.levelname.lower()
        return super().format(record)


def _configure_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_Formatter('[%(levelname)s] %(name)s: %(message)s'))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='superinfo',
        description=('SuperInfo: contrastive pretraining with '
                     'superfluous-information regularization'),
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging to stderr')
    parser.add_argument('--version', action='store_true', help='Show version and exit')
    sub = parser.add_subparsers(dest='command')

    p = sub.add_parser('gen-data', help='Write synthetic two-view train/test datasets')
    p.add_argument('--spec', required=True, help='config file with data.* keys')
    p.add_argument('--out', help='output directory (default: out.dir or .)')
    p.add_argument('--seed', type=int, help='override the config seed')

    p = sub.add_parser('mi-check', help='Run the information identity and bound suites')
    p.add_argument('--trials', type=int, default=100)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--mc-samples', type=int, default=1_000_000)
    p.add_argument('--joint', help='CSV joint distribution to check as well')

    p = sub.add_parser('pretrain', help='Pretrain an encoder with the SuperInfo loss')
    p.add_argument('--config', required=True)
    p.add_argument('--data', required=True, help='training .sids file')
    p.add_argument('--out', help='checkpoint path (default: out.checkpoint)')
    p.add_argument('--metrics', help='metrics JSONL path (default: out.metrics)')
    p.add_argument('--resume', help='checkpoint to continue from')

    p = sub.add_parser('probe', help='Linear probe on frozen encoder features')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--train', required=True)
    p.add_argument('--test', required=True)
    p.add_argument('--out', help='ProbeResult JSON path (default: stdout)')
    p.add_argument('--config', help='config file supplying probe.* keys')

    p = sub.add_parser('ablate', help='Pretrain + probe over a grid of loss weights')
    p.add_argument('--config', required=True)
    p.add_argument('--grid', help='"l1,l2,l3,l4;..." (default: ablate.grid)')
    p.add_argument('--out', help='CSV path (default: out.report)')
    p.add_argument('--seeds', type=int, help='seeds per grid point (default: ablate.seeds)')
    p.add_argument('--jobs', type=int, help='parallel workers (default: ablate.jobs)')

    p = sub.add_parser('report', help='Per-epoch CSV table or SVG chart from metrics')
    p.add_argument('--metrics', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--format', choices=('csv', 'svg'), default='csv')
    p.add_argument('--series', help='comma-separated series for svg (default: l_total,l_cl)')
    return parser


def main(argv=None):
    """Command-line interface for superinfo."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.version:
        from superinfo import __version__
        print(f'superinfo {__version__}')
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_INPUT

    _configure_logging(args.verbose)

    from superinfo.runtime.adapters import ReportError
    from superinfo.runtime.evaluation import ProbeError
    from superinfo.runtime.pipeline import SuperInfoRuntimeError
    from superinfo.runtime.trainer import NonFiniteLossError

    handlers = {
        'gen-data': _cmd_gen_data,
        'mi-check': _cmd_mi_check,
        'pretrain': _cmd_pretrain,
        'probe': _cmd_probe,
        'ablate': _cmd_ablate,
        'report': _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except NonFiniteLossError as e:
        print(f'[error] {e}', file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ConfigError, FormatError, DistributionError, TensorError, ModelError,
            LossError, DataError, ProbeError, ReportError, SuperInfoRuntimeError) as e:
        print(f'[error] {e}', file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f'[error] File not found: {e.filename or e}', file=sys.stderr)
        return EXIT_INPUT


# ── subcommands ──────────────────────────────────────────────────────────────

def _cmd_gen_data(args):
    from superinfo.runtime.pipeline import generate_datasets, write_datasets
    cfg = RunConfig.from_file(args.spec)
    cfg.require('gen-data')
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = args.out or cfg.out.dir or '.'
    for path in write_datasets(generate_datasets(cfg.data, seed), out_dir):
        print(f'[info] wrote {path}', file=sys.stderr)
    return EXIT_OK


def _cmd_mi_check(args):
    from superinfo.info import JointDistribution
    from superinfo.runtime.checks import run_joint_suites, run_suites
    if args.trials < 1:
        raise ConfigError(f'--trials must be at least 1, got {args.trials}')
    if args.mc_samples < 1:
        raise ConfigError(f'--mc-samples must be at least 1, got {args.mc_samples}')
    joint = JointDistribution.read_csv(args.joint) if args.joint else None
    results = run_suites(trials=args.trials, seed=args.seed, mc_samples=args.mc_samples)
    if joint is not None:
        results += run_joint_suites(joint)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def _cmd_pretrain(args):
    from superinfo.runtime.pipeline import load_dataset, run_pretrain
    cfg = RunConfig.from_file(args.config)
    cfg.require('pretrain')
    data = load_dataset(args.data)
    checkpoint = args.out or cfg.out.checkpoint
    metrics = args.metrics or cfg.out.metrics
    if checkpoint is None:
        raise ConfigError('pretrain: no checkpoint path (use --out or out.checkpoint)')
    config = cfg.superinfo_config(input_dim=data.dim)
    state = run_pretrain(config, data, checkpoint, metrics, args.resume)
    print(f'[info] run {state.run_id}: {state.epoch} epochs, checkpoint {checkpoint}',
          file=sys.stderr)
    return EXIT_OK


def _cmd_probe(args):
    from superinfo.runtime.pipeline import load_dataset, run_probe, write_probe_result
    probe_cfg = RunConfig.from_file(args.config).probe if args.config else ProbeConfig()
    train = load_dataset(args.train)
    test = load_dataset(args.test)
    result = run_probe(args.ckpt, train, test, probe_cfg)
    if args.out:
        write_probe_result(result, args.out)
    else:
        print(result.model_dump_json(indent=2))
    print(f'[info] accuracy {result.accuracy:.4f}', file=sys.stderr)
    return EXIT_OK


def _cmd_ablate(args):
    from superinfo.parser import parse_grid
    from superinfo.runtime.pipeline import run_ablation, write_ablation_csv
    cfg = RunConfig.from_file(args.config)
    cfg.require('ablate')
    grid_text = args.grid or cfg.ablate.grid
    if not grid_text:
        raise ConfigError('ablate: no grid (use --grid or ablate.grid)')
    out = args.out or cfg.out.report
    if out is None:
        raise ConfigError('ablate: no output path (use --out or out.report)')
    seeds = cfg.ablate.seeds if args.seeds is None else args.seeds
    jobs = cfg.ablate.jobs if args.jobs is None else args.jobs
    if seeds < 1 or jobs < 1:
        raise ConfigError('--seeds and --jobs must be at least 1')
    frame = run_ablation(cfg, parse_grid(grid_text), seeds=seeds, jobs=jobs)
    write_ablation_csv(frame, out)
    print(f'[info] wrote {len(frame)} rows to {out}', file=sys.stderr)
    return EXIT_OK


def _cmd_report(args):
    from superinfo.parser import split_list
    from superinfo.runtime.adapters import read_metrics, write_csv_report, write_svg_report
    metrics = read_metrics(args.metrics)
    if args.format == 'svg':
        series = split_list(args.series) if args.series else None
        write_svg_report(metrics, args.out, series)
    else:
        write_csv_report(metrics, args.out)
    return EXIT_OK

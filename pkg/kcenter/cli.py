"""
"kcenter" runs the k-center pipeline on a simulated MPC cluster and reports
the achieved cost, the cost certificate, and the resources used.

Subcommands:
    run         Run an experiment on a point file or a planted instance
    generate    Write a planted instance as a point file
"""

import argparse
import logging
import sys

from .config import (ORACLES, PIPELINES, ExperimentConfig, PlantedSpec,
                     load_config)
from .exceptions import (ConfigError, GeometryError, InvalidParams,
                         NoFeasibleRadius, PipelineFailure)
from .geometry import save_points
from .harness import generate_planted, render_summary, run_experiment
from .utils import setup_logging


logger = logging.getLogger(__name__)

description = __doc__

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PIPELINE = 3
EXIT_INFEASIBLE = 4

# Options of "run" that map directly onto ExperimentConfig keys
_CONFIG_OPTIONS = ('input', 'planted', 'k', 'alpha', 'delta', 'rho', 'seed',
                   'psi', 'out', 'csv', 'oracle', 'summary', 'pipeline',
                   'radius', 'workers', 'trace')


def _add_logging_arguments(parser):
    parser.add_argument(
        '--log',
        '-l',
        default='WARNING',  # WARN level messages
        type=str,
        help='Python logging level (e.g. DEBUG, INFO, WARNING)'
    )

    parser.add_argument(
        '--log-config', type=str, default=None,
        help='YAML logging configuration (defaults to logging.yml)'
    )


def build_arg_parser():
    parser = argparse.ArgumentParser(
        prog='kcenter',
        description=description,
        formatter_class=argparse.RawTextHelpFormatter
    )
    subparsers = parser.add_subparsers(dest='command')
    subparsers.required = True

    run_parser = subparsers.add_parser(
        'run', help='Run an experiment',
        formatter_class=argparse.RawTextHelpFormatter
    )
    source = run_parser.add_mutually_exclusive_group()
    source.add_argument(
        '--input', type=str, default=None,
        help='Point file (one whitespace-separated point per line)'
    )
    source.add_argument(
        '--planted', type=str, default=None,
        help='Planted instance as k,n,d,rstar,sep'
    )

    run_parser.add_argument(
        '--config', type=str, default=None,
        help='JSON configuration; options given here take precedence'
    )

    run_parser.add_argument('--k', type=int, default=None,
                            help='Number of centers')
    run_parser.add_argument('--alpha', type=int, default=None,
                            help='Refinement depth (default 1)')
    run_parser.add_argument('--delta', type=float, default=None,
                            help='Local space exponent, S = O(n^delta)')
    run_parser.add_argument('--rho', type=float, default=None,
                            help='LSH exponent')
    run_parser.add_argument('--seed', type=int, default=None,
                            help='Random seed')
    run_parser.add_argument('--psi', type=int, default=None,
                            help='Repetitions per radius')
    run_parser.add_argument('--radius', type=float, default=None,
                            help='Fixed radius for the ext and repeat '
                                 'pipelines')
    run_parser.add_argument('--pipeline', choices=PIPELINES, default=None,
                            help='Pipeline to run (default search)')
    run_parser.add_argument('--oracle', choices=ORACLES, default=None,
                            help='Baseline for the approximation ratio')
    run_parser.add_argument('--workers', type=int, default=None,
                            help='Threads for independent tasks')
    run_parser.add_argument('--out', type=str, default=None,
                            help='JSON report')
    run_parser.add_argument('--csv', type=str, default=None,
                            help='CSV report (one row)')
    run_parser.add_argument('--summary', type=str, default=None,
                            help='Human-readable summary; printed to stdout '
                                 'if omitted')
    run_parser.add_argument('--trace', type=str, default=None,
                            help='Stage trace as JSON lines')
    _add_logging_arguments(run_parser)

    generate_parser = subparsers.add_parser(
        'generate', help='Write a planted instance as a point file'
    )
    generate_parser.add_argument(
        '--planted', type=str, required=True,
        help='Planted instance as k,n,d,rstar,sep'
    )
    generate_parser.add_argument('--seed', type=int, default=0,
                                 help='Random seed')
    generate_parser.add_argument('--out', type=str, required=True,
                                 help='Output point file')
    _add_logging_arguments(generate_parser)
    return parser


def main(*, cmdline_args=None):
    parser = build_arg_parser()
    return run(parser.parse_args(cmdline_args))


def build_config(args):
    '''
    The experiment configuration of a "run" invocation

    Values from ``--config`` are read first; command-line options override
    them.
    '''
    overrides = {key: getattr(args, key) for key in _CONFIG_OPTIONS
                 if getattr(args, key) is not None}
    if args.config:
        return load_config(args.config, overrides=overrides)
    return ExperimentConfig.from_dict(overrides)


def run(args):
    setup_logging(args.log_config, level=args.log.upper())
    try:
        if args.command == 'generate':
            return generate(args)
        return run_command(args)
    except (ConfigError, InvalidParams, GeometryError) as ex:
        logger.error('Invalid input: %s', ex)
        return EXIT_VALIDATION
    except NoFeasibleRadius as ex:
        logger.error('No feasible radius: %s', ex)
        return EXIT_INFEASIBLE
    except PipelineFailure as ex:
        logger.error('Pipeline failed: %s', ex)
        return EXIT_PIPELINE


def run_command(args):
    config = build_config(args)
    report = run_experiment(config)
    if not config.summary:
        sys.stdout.write(render_summary(report))
    return EXIT_OK


def generate(args):
    spec = PlantedSpec.parse(args.planted)
    instance = generate_planted(*spec.as_tuple(), seed=args.seed)
    save_points(args.out, instance.points)
    logger.info('Wrote %d points in %d clusters to %s', instance.points.n,
                instance.k_true, args.out)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

import argparse
import logging
import os
import sys

from config import Config, load_run_config
from exceptions import ConfigError, HashMismatch, MissingArtifact, StageFailure
from pipeline import STAGES, Pipeline, stage_names

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

logger = logging.getLogger('dnpu_sim')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='dnpu-sim',
        description='DNPU feature extraction + analogue in-memory CNN pipeline simulator',
    )
    parser.add_argument('--config', default=None, help='JSON run configuration (defaults when omitted)')
    parser.add_argument('--seed', type=int, default=None, help='Master seed; every sub-seed derives from it')
    parser.add_argument('--out', default=None, help=f"Run directory (default {Config.OUTPUT_DIR})")
    parser.add_argument('--channels', type=int, default=None, help='Number of DNPU channels in the bank')
    parser.add_argument('--stage', default='all', choices=list(STAGES) + ['all'], help='Stage to run')
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level')
    return parser


def setup_logging(out_dir, verbose=False):
    """Configure the root logger once: stdout plus <out>/run.log."""
    os.makedirs(out_dir, exist_ok=True)
    level = logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(os.path.join(out_dir, 'run.log'), encoding='utf-8')
        ],
        force=True
    )


def main(argv=None):
    """
    Run the requested stage(s).

    Returns:
        int: 0 on success, 2 on a configuration error, 3 when a stage fails
    """
    args = build_parser().parse_args(argv)
    out_dir = args.out or Config.OUTPUT_DIR

    try:
        Config.validate()
        setup_logging(out_dir, args.verbose)
        config = load_run_config(args.config, seed=args.seed, channels=args.channels)
        stages = stage_names(args.stage)
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        Pipeline(config, out_dir).run(stages)
    except StageFailure as e:
        if isinstance(e.cause, ConfigError):
            print(f"configuration error in stage '{e.stage}': {e.cause}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"stage '{e.stage}' failed: {e.cause}", file=sys.stderr)
        return EXIT_STAGE
    except (MissingArtifact, HashMismatch) as e:
        logger.error(str(e))
        print(f"stage '{args.stage}' failed: {e}", file=sys.stderr)
        return EXIT_STAGE

    logger.info(f"Run complete in {out_dir}")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

"""Extract CPC features from a directory of WAV files into a feature archive.

The archive goes to --out; a JSON report is printed to stdout. Exit codes:
0 success, 1 usage or missing inputs, 2 extraction errors (bad checkpoint,
invalid layer, unusable audio).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .extract import MODES, AudioError, ExtractConfig, extract_features
from .model import CheckpointError, LayerError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EXTRACT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpc-extract", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cpc-extract {__version__}")
    parser.add_argument("--ckpt", required=True, help="pretrained model checkpoint")
    parser.add_argument("--audio-dir", required=True, help="directory of 16-bit mono WAVs")
    parser.add_argument("--out", required=True, help="feature archive to write")
    parser.add_argument("--layer", type=int, default=2,
                        help="context LSTM layer to read features from (1-indexed)")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--mode", choices=MODES, default="utterance",
                        help="reset context per file, or carry it across files")
    parser.add_argument("--sample-rate", type=int, default=16000)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = ExtractConfig(
            checkpoint=args.ckpt,
            audio_dir=args.audio_dir,
            out=args.out,
            layer=args.layer,
            batch_size=args.batch_size,
            mode=args.mode,
            sample_rate_hz=args.sample_rate,
        )
    except (_UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = extract_features(config)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, LayerError, AudioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EXTRACT
    json.dump(report.as_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

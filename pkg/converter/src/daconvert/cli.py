"""Command line: ``daconvert convert`` and ``daconvert validate``.

Exit codes: 0 success, 1 validation problem (bad flags, missing inputs,
schema violations), 2 unexpected runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .convert import KINDS, RawCorpusDescriptor, convert, validate_output


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


class UsageError(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="daconvert", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("convert", help="raw corpus tree -> canonical JSONL")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--root", required=True, metavar="DIR",
                   help="raw corpus root directory")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for corpus.jsonl, labels.txt, "
                        "splits.json")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("validate", help="schema-check a converted corpus")
    p.add_argument("corpus", metavar="CORPUS", help="corpus.jsonl to check")
    p.add_argument("--labels", metavar="FILE",
                   help="label file; labels outside it become violations")
    p.set_defaults(func=_cmd_validate)
    return parser


def _cmd_convert(args) -> int:
    desc = RawCorpusDescriptor(kind=args.kind, root=args.root, out=args.out)
    report = convert(desc)
    for line in report.lines():
        print(line)
    return 0


def _cmd_validate(args) -> int:
    report = validate_output(args.corpus, labels_path=args.labels)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        print(parser.format_usage(), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command line wrapper: one positional output path, optional source file."""

import argparse
import sys

from .export import ExportError, export_pretrained, load_state_file


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vgg16-hcrw-export",
        description="Write VGG16's block1-block4 conv weights as an HCRW v1 archive",
    )
    parser.add_argument("output", help="archive file to write")
    parser.add_argument(
        "--weights-file", metavar="PTH",
        help="VGG16 state-dict file to read instead of the torchvision download cache",
    )
    args = parser.parse_args(argv)
    try:
        state = load_state_file(args.weights_file) if args.weights_file else None
        export_pretrained(args.output, state=state)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()

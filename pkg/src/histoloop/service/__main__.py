"""Run the annotation service: python -m histoloop.service --data-root DIR"""

import argparse

from .app import serve
from .config import ServiceConfig


def main() -> None:
    parser = argparse.ArgumentParser(prog="histoloop.service")
    parser.add_argument("--config", default=None, help="service config JSON")
    parser.add_argument("--data-root", default=None)
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args()
    config = ServiceConfig.load(args.config)
    if args.data_root:
        config.data_root = args.data_root
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    serve(config)


if __name__ == "__main__":
    main()

"""Command line entry point: ``depthfield {generate,train,eval,query,ablate,serve}``.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import service
from .pipeline import EVAL_PROTOCOLS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="depthfield", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    g.add_argument("--config", help="dataset spec file ([dataset] and [scene] sections)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--dataset")
    t.add_argument("--log-every", type=int, default=50)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--protocol", required=True, choices=EVAL_PROTOCOLS + ("fixed",))
    e.add_argument("--config", help="refuse the checkpoint unless its config matches this file")
    e.add_argument("--dataset")
    e.add_argument("--out", help="metrics CSV path")
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--samples", type=int, default=4, help="targets per scene (0 = all)")

    q = sub.add_parser("query", help="decode depth and RGB at an arbitrary pose")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--pose", required=True, help="4x4 world-to-camera pose file")
    q.add_argument("--out", required=True, help="output directory")
    q.add_argument("--dataset")
    q.add_argument("--scene")
    q.add_argument("--frames", type=_ints, default=(0,), help="encoded frame indices")
    q.add_argument("--intrinsics")
    q.add_argument("--height", type=int)
    q.add_argument("--width", type=int)

    a = sub.add_parser("ablate", help="train with and without one component")
    a.add_argument("--factor", required=True, choices=tuple(service.ABLATIONS))
    a.add_argument("--config")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.add_argument("--dataset")

    s = sub.add_parser("serve", help="run the HTTP API")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=str))


def _print_rows(rows) -> None:
    for r in rows:
        print("  ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in r.items()))


def run(args: argparse.Namespace) -> int:
    if args.command == "generate":
        _print(service.generate(args.out, args.config, args.seed))
    elif args.command == "train":
        res = service.train(args.config, args.seed, args.out, args.dataset, args.log_every)
        _print_rows(res.pop("metrics"))
        _print(res)
    elif args.command == "eval":
        _print_rows(service.evaluate(args.checkpoint, args.protocol, args.dataset, args.out,
                                     args.config, args.split, args.samples))
    elif args.command == "query":
        _print(service.query(args.checkpoint, args.pose, args.out, args.dataset, args.scene,
                             args.frames, args.intrinsics, args.height, args.width))
    elif args.command == "ablate":
        _print_rows(service.ablate(args.config, args.factor, args.out, args.seed, args.dataset))
    elif args.command == "serve":
        import uvicorn

        uvicorn.run("depthfield.api:app", host=args.host, port=args.port)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and args.log_every:
        logging.getLogger("depthfield").setLevel(logging.INFO)
    try:
        return run(args)
    except service.ServiceError as exc:
        print(f"depthfield {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

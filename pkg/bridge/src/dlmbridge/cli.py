"""The ``dlm-bridge`` command line: serve a model, export tables, dump the vocab."""

from __future__ import annotations

import argparse
import logging
import sys

from .export import export_table, read_record
from .model import load_backend
from .server import BridgeServer, ServerConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlm-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="serve the oracle wire protocol")
    serve.add_argument("--model", default="stub", help="'stub', 'stub:<seed>' or a transformers id")
    serve.add_argument("--device", default="cpu")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=0)
    serve.add_argument("--stdio", action="store_true", help="serve one session on stdin/stdout")
    serve.add_argument("--max-batch", type=int, default=8)
    serve.add_argument("--top-k", type=int, default=8)
    serve.add_argument("--record", help="append predict frames to this JSONL file")

    export = sub.add_parser("export", help="replay a recorded session into a table-oracle file")
    export.add_argument("--model", default="stub")
    export.add_argument("--device", default="cpu")
    export.add_argument("--record", required=True)
    export.add_argument("--out", required=True)

    vocab = sub.add_parser("vocab", help="write the model's vocabulary file")
    vocab.add_argument("--model", default="stub")
    vocab.add_argument("--device", default="cpu")
    vocab.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    model = load_backend(args.model, device=args.device)

    if args.command == "serve":
        config = ServerConfig(
            model_id=args.model,
            device=args.device,
            max_batch=args.max_batch,
            host=args.host,
            port=args.port,
            stdio=args.stdio,
            top_k=args.top_k,
            record_path=args.record,
        )
        server = BridgeServer(model, config)
        if args.stdio:
            server.serve_stream(sys.stdin, sys.stdout)
            return 0
        port = server.start()
        print(f"listening on {config.host}:{port}", flush=True)
        server.serve_forever()
        return 0

    if args.command == "export":
        rows = export_table(model, read_record(args.record), args.out)
        print(f"wrote {rows} rows to {args.out}")
        return 0

    if args.command == "vocab":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"#mask={model.mask_id} #eos={model.eos_id} #pad={model.pad_id}\n")
            for token in model.tokens:
                fh.write(token + "\n")
        print(args.out)
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())

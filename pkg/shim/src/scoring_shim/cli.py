"""Command line entry point for the scoring shim."""
from __future__ import annotations

import argparse
import os

import uvicorn

from .app import ShimConfig, create_app


def main() -> None:
    parser = argparse.ArgumentParser(description="Serve the model wire protocol over real scorers.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8091)
    parser.add_argument(
        "--itm-model",
        default="hash",
        help="'hash' for the deterministic stand-in, or a BLIP ITM checkpoint name",
    )
    parser.add_argument(
        "--chat-upstream",
        default="echo",
        help="'echo' or the base URL of an OpenAI-style chat-completions endpoint",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="force temperature 0 and fixed preprocessing so identical requests repeat exactly",
    )
    parser.add_argument(
        "--api-token",
        default=os.environ.get("SHIM_API_TOKEN"),
        help="static bearer token required on scoring endpoints (default: SHIM_API_TOKEN)",
    )
    args = parser.parse_args()

    config = ShimConfig(
        itm_model=args.itm_model,
        chat_upstream=args.chat_upstream,
        chat_api_key=os.environ.get("SHIM_CHAT_API_KEY"),
        deterministic=args.deterministic,
        api_token=args.api_token,
        host=args.host,
        port=args.port,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port)


if __name__ == "__main__":
    main()

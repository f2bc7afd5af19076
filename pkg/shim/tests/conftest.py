from __future__ import annotations

import threading
import time

import httpx
import pytest
import uvicorn

from scoring_shim import ShimConfig, create_app


class RunningShim:
    def __init__(self, config: ShimConfig | None = None, **app_kwargs):
        self.app = create_app(config or ShimConfig(deterministic=True), **app_kwargs)
        uv_config = uvicorn.Config(self.app, host="127.0.0.1", port=0, log_level="warning")
        self.server = uvicorn.Server(uv_config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.time() + 15
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("shim did not start")
            time.sleep(0.02)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        deadline = time.time() + 15
        with httpx.Client(base_url=self.base_url) as probe:
            while True:
                try:
                    if probe.get("/v1/health").status_code == 200:
                        return self.base_url
                except httpx.HTTPError:
                    pass
                if time.time() > deadline:
                    raise RuntimeError("shim never became healthy")
                time.sleep(0.05)

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture(scope="module")
def shim_url():
    with RunningShim() as url:
        yield url


@pytest.fixture(scope="module")
def shim_client(shim_url):
    with httpx.Client(base_url=shim_url, timeout=30.0) as client:
        yield client

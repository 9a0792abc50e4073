import json
import socket
import subprocess
import sys
import time

import httpx
import pytest

SCRIPT_BOOK = {
    "answer": "Paris.",
    "code": "import curses\n\ndef snake():\n    pass\n",
    "refined": "import curses\n\ndef snake_game():\n    return 0\n",
    "essay": "one two three",
}


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="session")
def service(tmp_path_factory):
    """A real `semflow serve` subprocess; yields its base url."""
    book = tmp_path_factory.mktemp("serve") / "book.json"
    book.write_text(json.dumps(SCRIPT_BOOK))
    port = _free_port()
    proc = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "semflow.cli",
            "serve",
            "--port",
            str(port),
            "--script-book",
            str(book),
        ],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    base = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + 20
        while True:
            try:
                if httpx.get(base + "/health", timeout=1.0).status_code == 200:
                    break
            except httpx.HTTPError:
                pass
            if proc.poll() is not None:
                raise RuntimeError("service exited during startup")
            if time.monotonic() > deadline:
                raise RuntimeError("service did not come up")
            time.sleep(0.1)
        yield base
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

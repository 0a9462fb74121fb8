import json
import signal
import subprocess
import sys
import time

import pytest
import requests


@pytest.fixture(scope="session")
def live_server():
    """A real `driverl serve` subprocess on a free port; the client packages
    consume the environment only through this wire interface."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "driverl.cli", "serve", "--port", "0",
         "--map", "circle"],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    try:
        line = proc.stdout.readline()
        info = json.loads(line)
        assert info["event"] == "serving"
        base = f"http://127.0.0.1:{info['port']}"
        deadline = time.time() + 30
        while True:
            try:
                requests.post(f"{base}/task", json={"family": "mpc", "seed": 0},
                              timeout=5)
                break
            except requests.RequestException:
                if time.time() > deadline:
                    raise RuntimeError("server did not come up")
                time.sleep(0.2)
        yield base
    finally:
        proc.send_signal(signal.SIGINT)
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()

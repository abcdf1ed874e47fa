"""Subprocess bridge for externally hosted classifiers.

Wire protocol ``SBBRIDGE/1``: newline-delimited JSON over the child's
standard streams, one request in flight at a time. Tensors travel as base64
little-endian float32 plus an explicit shape. The handshake advertises
num_classes, input_shape, layer_names and a capability subset; operations are
``predict``, ``input_gradient``, ``layer_grads`` and ``shutdown``.

Running this module as a script serves the reference network over the same
protocol, which doubles as the conformance peer for client tests:

    python -m saliencybench.bridge --model model.sbmc
"""

from __future__ import annotations

import argparse
import base64
import json
import queue
import subprocess
import sys
import threading

import numpy as np

from .errors import (
    BridgeCrashError,
    BridgeProtocolError,
    BridgeTimeoutError,
    CapabilityMissingError,
    SaliencyBenchError,
)
from .model import Capability, ModelHandle, load_model
from .tensors import Image, as_f64

PROTOCOL_VERSION = "SBBRIDGE/1"
DEFAULT_TIMEOUT = 30.0


def encode_tensor(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_tensor(payload: dict) -> np.ndarray:
    shape = tuple(int(s) for s in payload["shape"])
    raw = base64.b64decode(payload["data"])
    expect = 4 * int(np.prod(shape)) if shape else 4
    if len(raw) != expect:
        raise BridgeProtocolError(
            f"tensor payload is {len(raw)} bytes, shape needs {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# client

class BridgeClient:
    """Lock-step JSON-lines client for one child process."""

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self._next_id = 0
        self._proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self.handshake_info = self._handshake()

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def request(self, op: str, **fields) -> dict:
        if self._proc.poll() is not None:
            raise BridgeCrashError(f"bridge process exited with {self._proc.returncode}")
        req_id = self._next_id
        self._next_id += 1
        msg = {"id": req_id, "op": op}
        msg.update(fields)
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeCrashError(f"bridge stdin closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._proc.kill()
            raise BridgeTimeoutError(f"no reply to {op!r} within {self.timeout}s")
        if line is None:
            raise BridgeCrashError("bridge closed its stdout")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"unparseable reply: {line!r}") from exc
        if reply.get("id") != req_id:
            raise BridgeProtocolError(
                f"reply id {reply.get('id')} does not match request {req_id}")
        if not reply.get("ok", False):
            err = reply.get("error") or {}
            code = err.get("code", "PROTOCOL")
            message = err.get("message", "bridge error")
            if code == "CAPABILITY_MISSING":
                raise CapabilityMissingError(message)
            exc = BridgeProtocolError(message)
            exc.code = code
            raise exc
        return reply

    def _handshake(self) -> dict:
        reply = self.request("handshake")
        version = reply.get("version")
        if version != PROTOCOL_VERSION:
            self.close()
            exc = BridgeProtocolError(
                f"peer speaks {version!r}, expected {PROTOCOL_VERSION!r}")
            exc.code = "PROTOCOL_VERSION_MISMATCH"
            raise exc
        for key in ("num_classes", "input_shape", "capabilities"):
            if key not in reply:
                self.close()
                raise BridgeProtocolError(f"handshake missing field {key!r}")
        return reply

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.write(json.dumps(
                    {"id": self._next_id, "op": "shutdown"}) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BridgedModel(ModelHandle):
    """ModelHandle over a live bridge session."""

    def __init__(self, client: BridgeClient):
        self.client = client
        info = client.handshake_info
        self.num_classes = int(info["num_classes"])
        self.input_shape = tuple(int(v) for v in info["input_shape"])
        caps = set()
        for name in info["capabilities"]:
            try:
                caps.add(Capability(name))
            except ValueError:
                pass  # unknown flags from a newer peer are ignored
        caps.add(Capability.PREDICT)
        self.capabilities = frozenset(caps)
        self._layer_names = tuple(info.get("layer_names", ()))
        self.target_layer = info.get("target_layer")
        self.model_id = info.get("model_id", "bridged")

    @property
    def layer_names(self):
        return self._layer_names

    def predict(self, image: Image) -> np.ndarray:
        arr = self._check_image(image)
        reply = self.client.request("predict", tensor=encode_tensor(arr))
        probs = decode_tensor(reply["tensor"])
        if probs.shape != (self.num_classes,):
            raise BridgeProtocolError(f"predict returned shape {probs.shape}")
        return probs

    def input_gradient(self, image: Image, class_index: int,
                       post_softmax: bool = False) -> np.ndarray:
        if Capability.INPUT_GRAD not in self.capabilities:
            raise CapabilityMissingError("bridge peer does not expose INPUT_GRAD")
        arr = self._check_image(image)
        reply = self.client.request("input_gradient", tensor=encode_tensor(arr),
                                    class_index=int(class_index),
                                    post_softmax=bool(post_softmax))
        grad = decode_tensor(reply["tensor"])
        if grad.shape != arr.shape:
            raise BridgeProtocolError(f"gradient shape {grad.shape} != input")
        return grad

    def layer_activations_and_gradients(self, image: Image, class_index: int,
                                        layer_name: str):
        if Capability.LAYER_INTROSPECT not in self.capabilities:
            raise CapabilityMissingError("bridge peer does not expose LAYER_INTROSPECT")
        arr = self._check_image(image)
        reply = self.client.request("layer_grads", tensor=encode_tensor(arr),
                                    class_index=int(class_index),
                                    layer_name=layer_name)
        return decode_tensor(reply["activations"]), decode_tensor(reply["gradients"])

    def close(self) -> None:
        self.client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_bridge(command, timeout: float = DEFAULT_TIMEOUT) -> BridgedModel:
    return BridgedModel(BridgeClient(command, timeout=timeout))


# ---------------------------------------------------------------------------
# reference host

_HOST_CAPS = ("PREDICT", "INPUT_GRAD", "LAYER_INTROSPECT")


def _host_handle(model, msg: dict) -> dict:
    op = msg.get("op")
    if op == "handshake":
        return {
            "version": PROTOCOL_VERSION,
            "num_classes": model.num_classes,
            "input_shape": list(model.input_shape),
            "capabilities": list(_HOST_CAPS),
            "layer_names": list(model.layer_names),
            "target_layer": model.target_layer,
            "model_id": model.model_id,
        }
    if op == "predict":
        arr = decode_tensor(msg["tensor"])
        return {"tensor": encode_tensor(model.predict(Image(np.clip(arr, 0, 1))))}
    if op == "input_gradient":
        arr = decode_tensor(msg["tensor"])
        grad = model.input_gradient(Image(np.clip(arr, 0, 1)),
                                    int(msg["class_index"]),
                                    post_softmax=bool(msg.get("post_softmax", False)))
        return {"tensor": encode_tensor(grad)}
    if op == "layer_grads":
        arr = decode_tensor(msg["tensor"])
        acts, grads = model.layer_activations_and_gradients(
            Image(np.clip(arr, 0, 1)), int(msg["class_index"]), msg["layer_name"])
        return {"activations": encode_tensor(acts), "gradients": encode_tensor(grads)}
    raise BridgeProtocolError(f"unknown op {op!r}")


def serve(model, stdin=None, stdout=None) -> None:
    """Answer protocol requests line by line until shutdown or EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        msg_id = None
        try:
            msg = json.loads(line)
            msg_id = msg.get("id")
            if msg.get("op") == "shutdown":
                stdout.write(json.dumps({"id": msg_id, "ok": True}) + "\n")
                stdout.flush()
                return
            body = _host_handle(model, msg)
            reply = {"id": msg_id, "ok": True}
            reply.update(body)
        except SaliencyBenchError as exc:
            reply = {"id": msg_id, "ok": False,
                     "error": {"code": exc.code, "message": str(exc)}}
        except Exception as exc:  # malformed input must never kill the host
            reply = {"id": msg_id, "ok": False,
                     "error": {"code": "PROTOCOL", "message": str(exc)}}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="serve a saved model over the stdio bridge protocol")
    parser.add_argument("--model", required=True, help="path to a SBMC0001 file")
    args = parser.parse_args(argv)
    serve(load_model(args.model))
    return 0


if __name__ == "__main__":
    sys.exit(main())

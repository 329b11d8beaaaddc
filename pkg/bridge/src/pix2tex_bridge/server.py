"""Stdio victim server: newline-delimited JSON in, transcriptions out.

Protocol (one line each way, same order, one in-flight request):

    handshake:  {"ready": true}
    request:    {"id": <int>, "png_b64": "<base64 PNG>"}
    response:   {"id": <int>, "latex": "<string>"}
                {"id": <int>, "error": "<string>"}

The model loads before the handshake; a load failure exits nonzero so the
client never sees a ready line it cannot trust. A malformed request line
gets an error response and the loop continues; stdin EOF is a clean exit.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import io
import json
import sys
from dataclasses import dataclass


@dataclass(frozen=True)
class BridgeConfig:
    model: str = "stub"  # "stub" or a pix2tex checkpoint path / "default"
    device: str = "cpu"
    max_height: int | None = None  # downscale taller inputs before inference
    stub_latex: str = "x+1"


class StubModel:
    """Deterministic stand-in: fixed output, but still decodes the image so
    the full request path is exercised."""

    name = "stub"

    def __init__(self, latex: str):
        self.latex = latex

    def __call__(self, image) -> str:
        return self.latex


class Pix2TexModel:
    name = "pix2tex"

    def __init__(self, config: BridgeConfig):
        from pix2tex.cli import LatexOCR  # heavyweight import, deferred

        args = None
        if config.model not in ("default", ""):
            args = argparse.Namespace(checkpoint=config.model)
        self._ocr = LatexOCR(args) if args else LatexOCR()

    def __call__(self, image) -> str:
        return self._ocr(image)


def load_model(config: BridgeConfig):
    if config.model == "stub":
        return StubModel(config.stub_latex)
    return Pix2TexModel(config)


def _decode_image(png_b64: str, config: BridgeConfig):
    from PIL import Image

    raw = base64.b64decode(png_b64, validate=True)
    image = Image.open(io.BytesIO(raw))
    image.load()
    if config.max_height and image.height > config.max_height:
        w = round(image.width * config.max_height / image.height)
        image = image.resize((w, config.max_height))
    return image


def serve(config: BridgeConfig, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    try:
        model = load_model(config)
    except Exception as e:  # noqa: BLE001 - contract: no handshake on failure
        print(f"model load failed: {e}", file=sys.stderr)
        return 2
    print(f"serving model: {model.name} ({config.model})", file=sys.stderr)

    def respond(payload: dict) -> None:
        stdout.write(json.dumps(payload) + "\n")
        stdout.flush()

    respond({"ready": True})

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        rid = 0
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request is not an object")
            rid = int(req.get("id", 0))
            image = _decode_image(req["png_b64"], config)
        except (ValueError, KeyError, TypeError, binascii.Error, OSError) as e:
            respond({"id": rid, "error": f"malformed request: {e}"})
            continue
        try:
            latex = model(image)
        except Exception as e:  # noqa: BLE001 - per-request isolation
            respond({"id": rid, "error": f"model error: {e}"})
            continue
        respond({"id": rid, "latex": latex})
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pix2tex-bridge", description=__doc__)
    ap.add_argument("--stub", action="store_true",
                    help="serve a fixed-output stub model (no GPU, no downloads)")
    ap.add_argument("--stub-latex", default="x+1")
    ap.add_argument("--model", default="default",
                    help="pix2tex checkpoint path, or 'default'")
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--max-height", type=int, default=None)
    args = ap.parse_args(argv)

    config = BridgeConfig(
        model="stub" if args.stub else args.model,
        device=args.device,
        max_height=args.max_height,
        stub_latex=args.stub_latex,
    )
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())

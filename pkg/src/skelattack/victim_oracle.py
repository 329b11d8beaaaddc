"""Query interface to the victim OCR, plus a hermetic toy victim.

Two oracle kinds sit behind one ``query(img) -> OcrOutput`` surface:

* ``ToyTemplateOracle`` recognizes glyphs by nearest-template Hamming
  matching against a shared atlas. It is pure, deterministic, and
  attackable, so the whole pipeline can be tested closed-loop with no
  external model.
* ``ExternalProcessOracle`` talks newline-delimited JSON to a child
  process (request ``{"id":n,"png_b64":...}``, response
  ``{"id":n,"latex":...}`` after a ``{"ready":true}`` handshake).

Both enforce a query budget; the counter is lock-protected so concurrent
readers see a consistent ordinal.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import queue
import subprocess
import threading
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .image_core import GrayImage, as_gray_image, binarize
from .loss_metrics import tokenize
from .region_select import EIGHT_CONNECTED, skeletonize


class BudgetExhausted(RuntimeError):
    """Raised by the query after the configured budget was spent."""


class OracleUnavailable(RuntimeError):
    """External victim died, timed out, or broke the wire protocol."""


@dataclass(frozen=True)
class OcrOutput:
    latex: str
    tokens: list[str]
    query_index: int


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "toy"  # "toy" | "external"
    atlas_path: str | None = None  # toy: None means the builtin atlas
    command: list[str] | None = None
    query_budget: int = 100_000
    timeout_ms: int = 10_000
    threshold: int = 128

    def __post_init__(self):
        if self.query_budget <= 0:
            raise ValueError("query_budget must be positive")
        if self.kind not in ("toy", "external"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise ValueError("external oracle needs a command")


# ---------------------------------------------------------------------------
# Glyph atlas
# ---------------------------------------------------------------------------

# 5x7 master glyphs. Rendering scales these up and thins the strokes back
# to single-pixel lines, so every ink pixel carries real recognition weight.
_GLYPH_ART = {
    "a": [
        ".....",
        ".....",
        ".###.",
        "....#",
        ".####",
        "#...#",
        ".####",
    ],
    "b": [
        "#....",
        "#....",
        "####.",
        "#...#",
        "#...#",
        "#...#",
        "####.",
    ],
    "c": [
        ".....",
        ".....",
        ".####",
        "#....",
        "#....",
        "#....",
        ".####",
    ],
    "x": [
        ".....",
        "#...#",
        ".#.#.",
        "..#..",
        "..#..",
        ".#.#.",
        "#...#",
    ],
    "y": [
        ".....",
        "#...#",
        "#...#",
        ".####",
        "....#",
        "...#.",
        ".##..",
    ],
    "z": [
        ".....",
        ".....",
        "#####",
        "...#.",
        "..#..",
        ".#...",
        "#####",
    ],
    "0": [
        ".###.",
        "#...#",
        "#..##",
        "#.#.#",
        "##..#",
        "#...#",
        ".###.",
    ],
    "1": [
        "..#..",
        ".##..",
        "..#..",
        "..#..",
        "..#..",
        "..#..",
        ".###.",
    ],
    "2": [
        ".###.",
        "#...#",
        "....#",
        "...#.",
        "..#..",
        ".#...",
        "#####",
    ],
    "3": [
        ".###.",
        "#...#",
        "....#",
        "..##.",
        "....#",
        "#...#",
        ".###.",
    ],
    "4": [
        "...#.",
        "..##.",
        ".#.#.",
        "#..#.",
        "#####",
        "...#.",
        "...#.",
    ],
    "5": [
        "#####",
        "#....",
        "####.",
        "....#",
        "....#",
        "#...#",
        ".###.",
    ],
    "6": [
        "..##.",
        ".#...",
        "#....",
        "####.",
        "#...#",
        "#...#",
        ".###.",
    ],
    "7": [
        "#####",
        "....#",
        "...#.",
        "..#..",
        ".#...",
        ".#...",
        ".#...",
    ],
    "8": [
        ".###.",
        "#...#",
        "#...#",
        ".###.",
        "#...#",
        "#...#",
        ".###.",
    ],
    "9": [
        ".###.",
        "#...#",
        "#...#",
        ".####",
        "....#",
        "...#.",
        ".##..",
    ],
    "+": [
        ".....",
        "..#..",
        "..#..",
        "#####",
        "..#..",
        "..#..",
        ".....",
    ],
    "-": [
        ".....",
        ".....",
        ".....",
        "#####",
        ".....",
        ".....",
        ".....",
    ],
    "=": [
        ".....",
        ".....",
        "#####",
        ".....",
        "#####",
        ".....",
        ".....",
    ],
    "<": [
        "...#.",
        "..#..",
        ".#...",
        "#....",
        ".#...",
        "..#..",
        "...#.",
    ],
    ">": [
        ".#...",
        "..#..",
        "...#.",
        "....#",
        "...#.",
        "..#..",
        ".#...",
    ],
    "^": [
        "..#..",
        ".#.#.",
        "#...#",
        ".....",
        ".....",
        ".....",
        ".....",
    ],
    "{": [
        "..##.",
        ".#...",
        ".#...",
        "##...",
        ".#...",
        ".#...",
        "..##.",
    ],
    "}": [
        ".##..",
        "...#.",
        "...#.",
        "...##",
        "...#.",
        "...#.",
        ".##..",
    ],
}


def _art_to_mask(rows: list[str]) -> NDArray[np.bool_]:
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


def _tight_crop(bitmap: NDArray[np.bool_]) -> NDArray[np.bool_]:
    ys, xs = np.nonzero(bitmap)
    return bitmap[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def _fit_to_frame(crop: NDArray[np.bool_], frame: tuple[int, int]) -> NDArray[np.bool_]:
    """Center a tight crop inside the match frame, trimming if oversized."""
    fh, fw = frame
    h, w = crop.shape
    if h > fh:
        top = (h - fh) // 2
        crop = crop[top : top + fh, :]
        h = fh
    if w > fw:
        left = (w - fw) // 2
        crop = crop[:, left : left + fw]
        w = fw
    out = np.zeros(frame, dtype=bool)
    y0 = (fh - h) // 2
    x0 = (fw - w) // 2
    out[y0 : y0 + h, x0 : x0 + w] = crop
    return out


@dataclass(frozen=True, eq=False)
class GlyphAtlas:
    """Token -> glyph bitmap map shared by the renderer and the toy OCR."""

    glyphs: dict[str, NDArray[np.bool_]]
    glyph_height: int
    _templates: dict[str, NDArray[np.bool_]] = field(init=False, repr=False)
    _frame: tuple[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.glyphs:
            raise ValueError("atlas has no glyphs")
        crops = {}
        for token, bitmap in self.glyphs.items():
            if not bitmap.any():
                raise ValueError(f"glyph for {token!r} is blank")
            crops[token] = _tight_crop(bitmap)
        frame = (
            max(c.shape[0] for c in crops.values()),
            max(c.shape[1] for c in crops.values()),
        )
        templates = {t: _fit_to_frame(c, frame) for t, c in crops.items()}
        object.__setattr__(self, "_frame", frame)
        object.__setattr__(self, "_templates", templates)

    @property
    def tokens(self) -> list[str]:
        return sorted(self.glyphs)

    @property
    def frame(self) -> tuple[int, int]:
        return self._frame

    def template(self, token: str) -> NDArray[np.bool_]:
        return self._templates[token]

    def atlas_id(self) -> str:
        h = hashlib.sha256()
        for token in self.tokens:
            h.update(token.encode())
            h.update(np.packbits(self.glyphs[token]).tobytes())
        return h.hexdigest()[:12]


def builtin_atlas(scale: int = 4) -> GlyphAtlas:
    """Scale the 5x7 masters and thin the strokes back to one pixel."""
    glyphs = {}
    for token, art in _GLYPH_ART.items():
        scaled = np.kron(_art_to_mask(art), np.ones((scale, scale), dtype=bool))
        glyphs[token] = skeletonize(scaled)
    return GlyphAtlas(glyphs=glyphs, glyph_height=7 * scale)


def save_atlas(atlas: GlyphAtlas, dir_path) -> None:
    """Directory of 1-bit PNGs named by URL-encoded token, plus manifest."""
    from PIL import Image

    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for token, bitmap in atlas.glyphs.items():
        name = urllib.parse.quote(token, safe="") + ".png"
        Image.fromarray(~bitmap).save(d / name)  # ink = black on white
    manifest = {"glyph_height": atlas.glyph_height, "tokens": atlas.tokens}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_atlas(dir_path) -> GlyphAtlas:
    from PIL import Image

    d = Path(dir_path)
    manifest = json.loads((d / "manifest.json").read_text())
    glyphs = {}
    for token in manifest["tokens"]:
        name = urllib.parse.quote(token, safe="") + ".png"
        with Image.open(d / name) as im:
            glyphs[token] = ~np.asarray(im.convert("1"), dtype=bool)
    return GlyphAtlas(glyphs=glyphs, glyph_height=manifest["glyph_height"])


# ---------------------------------------------------------------------------
# Toy template OCR
# ---------------------------------------------------------------------------


def nearest_token(atlas: GlyphAtlas, probe: NDArray[np.bool_]) -> tuple[str, int]:
    """Closest atlas token by Hamming distance; ties break lexicographically."""
    fitted = _fit_to_frame(probe, atlas.frame)
    best: tuple[int, str] | None = None
    for token in atlas.tokens:
        d = int(np.count_nonzero(fitted ^ atlas.template(token)))
        if best is None or d < best[0]:
            best = (d, token)
    return best[1], best[0]


def _merge_regions(spans: list[tuple[int, int]]) -> list[list[int]]:
    """Group component indices whose horizontal spans overlap >= 50% of the
    narrower span. Union-find keeps the grouping transitive."""
    n = len(spans)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            (a0, a1), (b0, b1) = spans[i], spans[j]
            overlap = min(a1, b1) - max(a0, b0)
            narrower = min(a1 - a0, b1 - b0)
            if overlap * 2 >= narrower:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def toy_recognize(atlas: GlyphAtlas, img: GrayImage, threshold: int = 128) -> str:
    """Deterministic template-matching OCR over 8-connected ink regions."""
    mask = binarize(as_gray_image(img), threshold)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return ""
    slices = ndimage.find_objects(labels)
    spans = [(sl[1].start, sl[1].stop) for sl in slices]

    regions = []
    for group in _merge_regions(spans):
        member = np.isin(labels, [g + 1 for g in group])
        ys, xs = np.nonzero(member)
        y0, y1 = ys.min(), ys.max() + 1
        x0, x1 = xs.min(), xs.max() + 1
        regions.append((x0, y0, member[y0:y1, x0:x1]))

    regions.sort(key=lambda r: (r[0], r[1]))
    return "".join(nearest_token(atlas, crop)[0] for _, _, crop in regions)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.count = 0
        self._lock = threading.Lock()

    def next_index(self) -> int:
        with self._lock:
            if self.count >= self.limit:
                raise BudgetExhausted(f"query budget of {self.limit} exhausted")
            self.count += 1
            return self.count


class ToyTemplateOracle:
    def __init__(self, atlas: GlyphAtlas | None = None, threshold: int = 128,
                 query_budget: int = 100_000):
        self.atlas = atlas or builtin_atlas()
        self.threshold = threshold
        self._budget = _Budget(query_budget)

    @property
    def query_count(self) -> int:
        return self._budget.count

    def query(self, img: GrayImage) -> OcrOutput:
        idx = self._budget.next_index()
        latex = toy_recognize(self.atlas, img, self.threshold)
        return OcrOutput(latex=latex, tokens=tokenize(latex), query_index=idx)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _png_b64(img: GrayImage) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(as_gray_image(img), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class ExternalProcessOracle:
    """Client for the newline-delimited JSON victim protocol.

    Requests are serialized: one in-flight query per process. Any protocol
    breach (missing handshake, id mismatch, timeout, dead process) raises
    OracleUnavailable.
    """

    def __init__(self, command: list[str], query_budget: int = 100_000,
                 timeout_ms: int = 10_000):
        self._budget = _Budget(query_budget)
        self.timeout_s = timeout_ms / 1000.0
        self._lock = threading.Lock()
        self._id = 0
        try:
            self._proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        except OSError as e:
            raise OracleUnavailable(f"cannot start victim process: {e}") from e
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        hello = self._read_line()
        try:
            ready = json.loads(hello).get("ready") is True
        except (json.JSONDecodeError, AttributeError):
            ready = False
        if not ready:
            self.close()
            raise OracleUnavailable(f"bad handshake line: {hello!r}")

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise OracleUnavailable("victim timed out") from None
        if line is None:
            raise OracleUnavailable("victim closed its output")
        return line

    @property
    def query_count(self) -> int:
        return self._budget.count

    def query(self, img: GrayImage) -> OcrOutput:
        idx = self._budget.next_index()
        with self._lock:
            self._id += 1
            req = {"id": self._id, "png_b64": _png_b64(img)}
            try:
                self._proc.stdin.write(json.dumps(req) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError) as e:
                raise OracleUnavailable(f"victim pipe broken: {e}") from e
            line = self._read_line()
            try:
                resp = json.loads(line)
            except json.JSONDecodeError as e:
                raise OracleUnavailable(f"unparseable response {line!r}") from e
            if resp.get("id") != self._id:
                raise OracleUnavailable(
                    f"response id {resp.get('id')} does not match request {self._id}")
            if "error" in resp:
                raise OracleUnavailable(f"victim error: {resp['error']}")
            latex = resp.get("latex")
            if not isinstance(latex, str):
                raise OracleUnavailable(f"response missing latex field: {line!r}")
        return OcrOutput(latex=latex, tokens=tokenize(latex), query_index=idx)

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=2)
        except Exception:
            proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_oracle(config: OracleConfig):
    if config.kind == "toy":
        atlas = load_atlas(config.atlas_path) if config.atlas_path else builtin_atlas()
        return ToyTemplateOracle(atlas=atlas, threshold=config.threshold,
                                 query_budget=config.query_budget)
    return ExternalProcessOracle(command=list(config.command),
                                 query_budget=config.query_budget,
                                 timeout_ms=config.timeout_ms)

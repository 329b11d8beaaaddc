"""Reproducible evaluation corpus: formula strings and their renderings.

Formulas are sampled from a small linear grammar (variables, digits, binary
operators, one optional relation, superscripted digits) whose tokens all
exist in the glyph atlas, so the toy OCR round-trips the clean renders
exactly. Rendering composes atlas bitmaps left to right on a white canvas
and lands on the target height with nearest-neighbor scaling, which keeps
every pixel at 0 or 255.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .image_core import GrayImage, save_png
from .victim_oracle import GlyphAtlas, builtin_atlas, save_atlas, load_atlas

GENERATOR_VERSION = "1"

VARIABLES = list("abcxyz")
DIGITS = list("0123456789")
BINOPS = ["+", "-"]
RELATIONS = ["=", "<", ">"]

MIN_TOKENS = 5
MAX_TOKENS = 15


class GenerationError(RuntimeError):
    """Could not sample the requested number of distinct formulas."""


@dataclass(frozen=True)
class FormulaSpec:
    id: str
    latex: str
    tokens: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class DatasetImage:
    id: str
    image: GrayImage
    ground_truth: str
    path: str


def _pick(rng: np.random.Generator, items: list[str]) -> str:
    return items[int(rng.integers(0, len(items)))]


def _sample_tokens(rng: np.random.Generator) -> list[str]:
    n_terms = int(rng.integers(2, 6))
    terms = []
    for _ in range(n_terms):
        r = rng.random()
        if r < 0.35:
            terms.append([_pick(rng, VARIABLES)])
        elif r < 0.60:
            terms.append([_pick(rng, DIGITS)])
        else:
            terms.append([_pick(rng, VARIABLES), "^", "{", _pick(rng, DIGITS), "}"])
    joins = [_pick(rng, BINOPS) for _ in range(n_terms - 1)]
    if joins and rng.random() < 0.7:
        joins[int(rng.integers(0, len(joins)))] = _pick(rng, RELATIONS)
    tokens = list(terms[0])
    for join, term in zip(joins, terms[1:]):
        tokens.append(join)
        tokens.extend(term)
    return tokens


def generate_formulas(n: int, seed: int) -> list[FormulaSpec]:
    """Sample n distinct formulas, 5 to 15 tokens each, deterministically."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    specs: list[FormulaSpec] = []
    attempts = 0
    limit = 10_000 * n
    while len(specs) < n:
        attempts += 1
        if attempts > limit:
            raise GenerationError(f"grammar yielded only {len(specs)} distinct formulas")
        tokens = _sample_tokens(rng)
        if not MIN_TOKENS <= len(tokens) <= MAX_TOKENS:
            continue
        latex = "".join(tokens)
        if latex in seen:
            continue
        seen.add(latex)
        specs.append(FormulaSpec(
            id=f"img_{len(specs):03d}",
            latex=latex,
            tokens=tuple(tokens),
            seed=seed,
        ))
    return specs


def _raise_flags(tokens: tuple[str, ...]) -> list[bool]:
    """True for tokens inside a ^{...} group (brace tokens included)."""
    flags = [False] * len(tokens)
    i = 0
    while i < len(tokens):
        if tokens[i] == "^" and i + 1 < len(tokens) and tokens[i + 1] == "{":
            j, depth = i + 1, 0
            while j < len(tokens):
                if tokens[j] == "{":
                    depth += 1
                elif tokens[j] == "}":
                    depth -= 1
                    if depth == 0:
                        break
                j += 1
            j = min(j, len(tokens) - 1)
            for t in range(i + 1, j + 1):
                flags[t] = True
            i = j + 1
        else:
            i += 1
    return flags


def render(tokens, atlas: GlyphAtlas, target_height: int = 50) -> GrayImage:
    """Compose atlas glyphs left to right; superscript groups ride higher.

    The unscaled canvas derives its margins from the glyph height; the
    result is nearest-neighbor scaled so the output is exactly
    ``target_height`` pixels tall.
    """
    tokens = tuple(tokens)
    for t in tokens:
        if t not in atlas.glyphs:
            raise ValueError(f"token {t!r} not in atlas")
    gh = atlas.glyph_height
    top = round(gh / 7)
    sup_raise = round(3 * gh / 7)
    bottom = round(1.5 * gh / 7)
    gap = round(2 * gh / 7)
    margin_x = gap
    height = top + sup_raise + gh + bottom

    widths = [atlas.glyphs[t].shape[1] for t in tokens]
    width = 2 * margin_x + sum(widths) + gap * max(0, len(tokens) - 1)
    canvas = np.full((height, width), 255, dtype=np.uint8)

    x = margin_x
    for tok, raised, w in zip(tokens, _raise_flags(tokens), widths):
        y = top if raised else top + sup_raise
        bitmap = atlas.glyphs[tok]
        canvas[y : y + bitmap.shape[0], x : x + w][bitmap] = 0
        x += w + gap

    if height != target_height:
        out_w = max(1, round(width * target_height / height))
        im = Image.fromarray(canvas, mode="L").resize(
            (out_w, target_height), Image.NEAREST)
        canvas = np.asarray(im, dtype=np.uint8).copy()
    return canvas


def write_dataset(out_dir, n: int, seed: int, atlas: GlyphAtlas | None = None,
                  target_height: int = 50) -> Path:
    """Generate the corpus on disk; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    atlas = atlas or builtin_atlas()
    save_atlas(atlas, out / "atlas")

    entries = []
    for spec in generate_formulas(n, seed):
        img = render(spec.tokens, atlas, target_height)
        rel = f"images/{spec.id}.png"
        save_png(img, out / rel)
        digest = hashlib.sha256((out / rel).read_bytes()).hexdigest()
        entries.append({
            "id": spec.id,
            "latex": spec.latex,
            "tokens": list(spec.tokens),
            "seed": spec.seed,
            "image": rel,
            "sha256": digest,
            "width": int(img.shape[1]),
            "height": int(img.shape[0]),
        })

    manifest = {
        "generator_version": GENERATOR_VERSION,
        "atlas_id": atlas.atlas_id(),
        "target_height": target_height,
        "n": n,
        "seed": seed,
        "entries": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(dataset_dir, verify: bool = True) -> tuple[dict, list[DatasetImage], GlyphAtlas]:
    """Read a generated corpus back; hash mismatches are an error."""
    from .image_core import load_png

    d = Path(dataset_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    ids = [e["id"] for e in manifest["entries"]]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in manifest")
    images = []
    for e in manifest["entries"]:
        p = d / e["image"]
        if verify:
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            if digest != e["sha256"]:
                raise ValueError(f"hash mismatch for {e['id']}: file changed on disk")
        images.append(DatasetImage(
            id=e["id"], image=load_png(p), ground_truth=e["latex"], path=str(p)))
    atlas = load_atlas(d / "atlas")
    return manifest, images, atlas

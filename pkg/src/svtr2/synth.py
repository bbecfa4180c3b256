"""Deterministic synthetic text scenes built from 7x5 bitmap glyphs.

Images are white ink on a black background in [0, 1].  Every sample is a
pure function of its scene description and seed, and dataset sample seeds
are derived from ``(seed, index)`` so the worker count never changes output.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InputError
from .msr import Charset, RawSample, worker_count, write_pgm

GLYPH_H, GLYPH_W = 7, 5

_BITMAPS = {
    "a": (".....", ".....", ".###.", "....#", ".####", "#...#", ".####"),
    "b": ("#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."),
    "c": (".....", ".....", ".###.", "#....", "#....", "#...#", ".###."),
    "d": ("....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"),
    "e": (".....", ".....", ".###.", "#...#", "#####", "#....", ".###."),
    "f": ("..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."),
    "g": (".....", ".####", "#...#", "#...#", ".####", "....#", ".###."),
    "h": ("#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"),
    "i": ("..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."),
    "j": ("...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."),
    "l": (".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "m": (".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"),
    "n": (".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"),
    "o": (".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."),
    "p": (".....", "####.", "#...#", "#...#", "####.", "#....", "#...."),
    "q": (".....", ".####", "#...#", "#...#", ".####", "....#", "....#"),
    "r": (".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."),
    "s": (".....", ".....", ".####", "#....", ".###.", "....#", "####."),
    "t": (".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."),
    "u": (".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"),
    "v": (".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "w": (".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."),
    "x": (".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"),
    "y": (".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."),
    "z": (".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}

# Lowercase letters that can spell a usable word list.  No glyph in either
# alphabet equals another glyph (or itself) turned upside down, so a rotated
# string never renders the same as a different upright string.
DEFAULT_ALPHABET = "acdehilnorst"
TEST_ALPHABET = "abcdefghijklmnopqrstuvwxyz"

LEXICON = (
    "act", "acts", "aid", "aids", "air", "alien", "alone", "also", "alter", "and", "another", "arc", "area",
    "art", "ash", "aside", "ate", "cart", "case", "cash", "cast", "cat", "cell", "chair", "chart", "chase",
    "chest", "child", "children", "circle", "cite", "city", "clean", "clear", "client", "close", "cloth",
    "coast", "coat", "code", "coin", "cold", "color", "cool", "core", "corn", "cost", "cotton", "dance",
    "dark", "dash", "date", "deal", "dear", "decide", "delta", "dense", "desire", "detail", "diet", "dinner",
    "direct", "dish", "doctor", "dollar", "door", "dress", "drink", "each", "earn", "earth", "east", "eat",
    "edit", "editor", "elect", "else", "enter", "error", "estate", "hair", "half", "hall", "hand", "hard",
    "hat", "head", "heal", "hear", "heart", "heat", "hello", "here", "hero", "hide", "hill", "hint", "hire",
    "hold", "hole", "home", "horse", "hose", "host", "hotel", "hour", "ice", "idea", "ideal", "identical",
    "inch", "indirect", "inside", "insist", "into", "iron", "island", "itch", "lace", "ladder", "laid",
    "land", "lane", "large", "last", "late", "later", "lead", "leader", "lean", "least", "leather", "lend",
    "lesson", "letter", "lid", "line", "lion", "list", "listen", "little", "load", "loan", "local", "lord",
    "loss", "lost", "loud", "nail", "name", "near", "neat", "need", "nest", "nice", "niche", "night",
    "noise", "none", "north", "nose", "note", "notice", "oasis", "ocean", "odd", "old", "olive", "once",
    "one", "onion", "order", "other", "radio", "rail", "rain", "raise", "rare", "rate", "reach", "read",
    "real", "rear", "record", "red", "relation", "rent", "rest", "rice", "rich", "ride", "riot", "rise",
    "road", "roast", "role", "roll", "root", "rose", "sad", "sail", "sale", "salt", "sand", "scale", "scene",
    "school", "score", "sea", "seal", "seat", "second", "section", "seed", "sell", "send", "senior",
    "series", "shade", "share", "she", "shell", "shield", "shift", "shirt", "shoe", "shore", "short",
    "side", "sign", "silent", "sister", "site", "slide", "slot", "snail", "soil", "solar", "sold", "soldier",
    "sole", "solid", "son", "sore", "sort", "soul", "star", "start", "state", "steel", "stone", "store",
    "storm", "street", "stress", "table", "tail", "tale", "tall", "tea", "teach", "teacher", "tear", "tell",
    "ten", "tennis", "tent", "test", "than", "that", "the", "their", "then", "there", "these", "thin",
    "third", "this", "those", "thread", "three", "tide", "tie", "tile", "tin", "tire", "title", "toast",
    "toe", "tone", "tool", "torch", "total", "trace", "trade", "trail", "train", "trash", "treat", "tree",
    "trend", "trial", "tribe",
)

PROFILES = ("regular", "rotated", "curved", "occluded", "long", "vertical", "mixed")
_MIXED_POOL = ("regular", "rotated", "curved", "occluded", "long")


class GlyphFont:
    """Binary 7x5 bitmaps for ``alphabet``."""

    def __init__(self, alphabet: str = DEFAULT_ALPHABET):
        missing = [c for c in alphabet if c not in _BITMAPS]
        if missing:
            raise InputError(f"no glyph for {missing!r}")
        self.alphabet = alphabet
        self.charset = Charset(alphabet)
        self.glyphs = {c: np.array([[ch == "#" for ch in row] for row in _BITMAPS[c]], dtype=np.float64)
                       for c in alphabet}

    def __contains__(self, ch: str) -> bool:
        return ch in self.glyphs

    def glyph(self, ch: str) -> np.ndarray:
        try:
            return self.glyphs[ch]
        except KeyError:
            raise InputError(f"character {ch!r} is not in the font") from None


@dataclass(frozen=True)
class SceneSpec:
    text: str
    rotation_deg: float = 0.0
    curvature: float = 0.0
    occlusion_frac: float = 0.0
    glyph_scale: int = 2
    noise_sigma: float = 0.0
    layout: str = "horizontal"

    @property
    def margin(self) -> int:
        return self.glyph_scale


def occluded_count(length: int, frac: float) -> int:
    """Number of whole characters masked for an occlusion fraction."""
    if frac <= 0:
        return 0
    return min(length, max(1, int(math.floor(frac * length))))


def glyph_boxes(spec: SceneSpec) -> tuple:
    """Canvas size and the (top, left) corner of every glyph before rotation."""
    s, m, n = spec.glyph_scale, spec.margin, len(spec.text)
    gh, gw = GLYPH_H * s, GLYPH_W * s
    if spec.layout == "vertical":
        step = gh + s
        corners = [(m + k * step, m) for k in range(n)]
        return (2 * m + n * step - s, 2 * m + gw), corners
    step = gw + s
    amp = int(round(spec.curvature * 4 * s))
    corners = []
    for k in range(n):
        u = 0.0 if n == 1 else 2.0 * k / (n - 1) - 1.0
        corners.append((m + int(round(amp * (1.0 - u * u))), m + k * step))
    return (2 * m + gh + amp, 2 * m + n * step - s), corners


def _rotate(canvas: np.ndarray, angle: float) -> np.ndarray:
    """Rotate counter-clockwise about the centre, expanding to the rotated bounding box."""
    quarter = angle / 90.0
    if quarter == int(quarter):
        return np.ascontiguousarray(np.rot90(canvas, int(quarter) % 4))
    h, w = canvas.shape
    rad = math.radians(angle)
    c, s = math.cos(rad), math.sin(rad)
    out_h = int(math.ceil(abs(h * c) + abs(w * s) - 1e-9))
    out_w = int(math.ceil(abs(w * c) + abs(h * s) - 1e-9))
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    dy, dx = yy - (out_h - 1) / 2.0, xx - (out_w - 1) / 2.0
    # inverse map: rotate output coordinates clockwise back into the source
    src_x = c * dx - s * dy + (w - 1) / 2.0
    src_y = s * dx + c * dy + (h - 1) / 2.0
    return ndimage.map_coordinates(canvas, [src_y, src_x], order=1, mode="constant", cval=0.0)


def render(spec: SceneSpec, seed: int, font: Optional[GlyphFont] = None) -> RawSample:
    """Rasterise ``spec`` into a (3, H, W) sample in [0, 1]."""
    font = font or GlyphFont()
    if not spec.text:
        raise InputError("scene text must be non-empty")
    glyphs = [font.glyph(ch) for ch in spec.text]
    if spec.glyph_scale < 1:
        raise InputError("glyph_scale must be >= 1")
    if spec.layout not in ("horizontal", "vertical"):
        raise InputError(f"unknown layout {spec.layout!r}")
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x5EED])
    s = spec.glyph_scale
    (h, w), corners = glyph_boxes(spec)
    canvas = np.zeros((h, w))
    for g, (top, left) in zip(glyphs, corners):
        block = np.kron(g, np.ones((s, s)))
        canvas[top:top + block.shape[0], left:left + block.shape[1]] = np.maximum(
            canvas[top:top + block.shape[0], left:left + block.shape[1]], block)
    n_mask = occluded_count(len(glyphs), spec.occlusion_frac)
    if n_mask:
        for k in rng.choice(len(glyphs), size=n_mask, replace=False):
            top, left = corners[k]
            canvas[top:top + GLYPH_H * s, left:left + GLYPH_W * s] = 0.0
    if spec.rotation_deg:
        canvas = _rotate(canvas, spec.rotation_deg)
    if spec.noise_sigma > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, size=canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0)
    label = font.charset.encode(spec.text)
    return RawSample(np.repeat(canvas[None], 3, axis=0), label, spec.text)


def masked_positions(spec: SceneSpec, seed: int) -> list:
    """Indices of the characters ``render`` hides for this spec and seed."""
    n_mask = occluded_count(len(spec.text), spec.occlusion_frac)
    if not n_mask:
        return []
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x5EED])
    return sorted(int(k) for k in rng.choice(len(spec.text), size=n_mask, replace=False))


# datasets ------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileOptions:
    """Knobs shared by all profiles.  ``lengths`` overrides the profile's length range."""

    text_source: str = "random"  # "random" or "lexicon"
    lengths: Optional[tuple] = None
    noise_max: float = 0.05
    scales: tuple = (2, 3)


_DEFAULT_LENGTHS = {
    "regular": (1, 8), "rotated": (1, 8), "curved": (2, 8), "occluded": (3, 6), "long": (26, 35),
    "vertical": (1, 6),
}


def _text(rng: np.random.Generator, lengths: tuple, font: GlyphFont, source: str) -> str:
    lo, hi = lengths
    if source == "lexicon":
        words = [wd for wd in LEXICON if lo <= len(wd) <= hi and all(c in font for c in wd)]
        if words:
            return words[int(rng.integers(len(words)))]
        # long lengths: join words with no separator until inside the range
        target = int(rng.integers(lo, hi + 1))
        pool = [wd for wd in LEXICON if all(c in font for c in wd)]
        text = ""
        while len(text) < target:
            text += pool[int(rng.integers(len(pool)))]
        return text[:target]
    if source != "random":
        raise InputError(f"unknown text source {source!r}")
    n = int(rng.integers(lo, hi + 1))
    return "".join(font.alphabet[int(i)] for i in rng.integers(len(font.alphabet), size=n))


def sample_spec(profile: str, rng: np.random.Generator, font: GlyphFont,
                options: ProfileOptions = ProfileOptions()) -> SceneSpec:
    """Draw one scene description for ``profile``."""
    if profile == "mixed":
        profile = _MIXED_POOL[int(rng.integers(len(_MIXED_POOL)))]
    if profile not in _DEFAULT_LENGTHS:
        raise InputError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    lengths = options.lengths or _DEFAULT_LENGTHS[profile]
    text = _text(rng, lengths, font, options.text_source)
    scale = int(options.scales[int(rng.integers(len(options.scales)))])
    noise = float(rng.uniform(0.0, options.noise_max)) if options.noise_max > 0 else 0.0
    rotation, curvature, occlusion, layout = 0.0, 0.0, 0.0, "horizontal"
    if profile in ("regular", "long"):
        rotation = float(rng.uniform(-5.0, 5.0))
    elif profile == "rotated":
        rotation = float(rng.choice((90.0, 180.0, 270.0)) + rng.uniform(-10.0, 10.0))
    elif profile == "curved":
        curvature = float(rng.uniform(0.5, 1.0))
    elif profile == "occluded":
        occlusion = float(rng.uniform(0.1, 0.3))
        # keep exactly one masked character for longer overridden lengths
        occlusion = min(occlusion, 1.99 / len(text))
    elif profile == "vertical":
        layout = "vertical"
    return SceneSpec(text, rotation, curvature, occlusion, scale, noise, layout)


def sample_seed(seed: int, index: int) -> int:
    """Per-sample seed, a hash of ``(seed, index)``."""
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, index]).generate_state(1)[0])


def _make_one(args):
    profile, seed, index, alphabet, options = args
    font = GlyphFont(alphabet)
    sub = sample_seed(seed, index)
    rng = np.random.default_rng(sub)
    if profile == "mixed":
        profile = _MIXED_POOL[int(rng.integers(len(_MIXED_POOL)))]
    spec = sample_spec(profile, rng, font, options)
    return profile, spec, render(spec, sub, font)


def generate(profile: str, n: int, seed: int, font: Optional[GlyphFont] = None,
             options: ProfileOptions = ProfileOptions()) -> list:
    """In-memory dataset: ``[(SceneSpec, RawSample)]``."""
    if n < 1:
        raise InputError("n must be >= 1")
    font = font or GlyphFont()
    jobs = [(profile, seed, i, font.alphabet, options) for i in range(n)]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_make_one, jobs, chunksize=16))
    else:
        out = [_make_one(j) for j in jobs]
    # mixed samples are named after the profile actually drawn, so reports can split by it
    return [(spec, replace_id(sample, f"images/{drawn}_{i}.pgm")) for i, (drawn, spec, sample) in enumerate(out)]


def replace_id(sample: RawSample, source_id: str) -> RawSample:
    return replace(sample, source_id=source_id)


def make_dataset(profile: str, n: int, seed: int, out, font: Optional[GlyphFont] = None,
                 options: ProfileOptions = ProfileOptions()) -> Path:
    """Write ``images/``, ``manifest.tsv`` and ``charset.txt`` under ``out``; return the manifest path."""
    font = font or GlyphFont()
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for spec, sample in generate(profile, n, seed, font, options):
        write_pgm(out / sample.source_id, sample.image[0])
        rows.append(f"{sample.source_id}\t{spec.text}\n")
    manifest = out / "manifest.tsv"
    manifest.write_text("".join(rows), encoding="utf-8")
    font.charset.save(out / "charset.txt")
    return manifest


# augmentation --------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """Each transform fires independently with probability ``prob``."""

    prob: float = 0.5
    max_rotation: float = 15.0
    max_perspective: float = 0.1
    blur_lengths: tuple = (3, 5)
    max_noise: float = 0.05


def _perspective(gray: np.ndarray, rng: np.random.Generator, amount: float) -> np.ndarray:
    h, w = gray.shape
    src = np.array([[0, 0], [0, w - 1], [h - 1, 0], [h - 1, w - 1]], dtype=np.float64)
    jitter = rng.uniform(-amount, amount, size=(4, 2)) * np.array([h, w])
    dst = src + jitter
    # homography from output (dst) corners back to source corners
    rows = []
    rhs = []
    for (y, x), (sy, sx) in zip(dst, src):
        rows.append([y, x, 1, 0, 0, 0, -sy * y, -sy * x])
        rhs.append(sy)
        rows.append([0, 0, 0, y, x, 1, -sx * y, -sx * x])
        rhs.append(sx)
    p = np.linalg.solve(np.array(rows), np.array(rhs))
    hm = np.append(p, 1.0).reshape(3, 3)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    den = hm[2, 0] * yy + hm[2, 1] * xx + hm[2, 2]
    sy = (hm[0, 0] * yy + hm[0, 1] * xx + hm[0, 2]) / den
    sx = (hm[1, 0] * yy + hm[1, 1] * xx + hm[1, 2]) / den
    return ndimage.map_coordinates(gray, [sy, sx], order=1, mode="constant", cval=0.0)


def _small_rotation(gray: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the centre keeping the canvas size."""
    h, w = gray.shape
    rad = math.radians(angle)
    c, s = math.cos(rad), math.sin(rad)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - (h - 1) / 2.0, xx - (w - 1) / 2.0
    return ndimage.map_coordinates(gray, [s * dx + c * dy + (h - 1) / 2.0, c * dx - s * dy + (w - 1) / 2.0],
                                   order=1, mode="constant", cval=0.0)


def augment(sample: RawSample, seed: int, config: AugmentConfig = AugmentConfig()) -> RawSample:
    """Random subset of rotation, perspective jitter, horizontal motion blur and noise."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0xA06])
    fire = rng.random(4) < config.prob
    if not fire.any():
        return RawSample(sample.image.copy(), sample.label, sample.source_id)
    img = sample.image
    channels = []
    # draw every random quantity up front so each channel sees the same chain
    angle = rng.uniform(-config.max_rotation, config.max_rotation)
    persp_seed = int(rng.integers(2**31))
    blur = int(rng.choice(config.blur_lengths))
    sigma = rng.uniform(0.0, config.max_noise)
    noise = rng.normal(0.0, 1.0, size=img.shape[1:])
    for ch in img:
        g = ch
        if fire[0]:
            g = _small_rotation(g, angle)
        if fire[1]:
            g = _perspective(g, np.random.default_rng(persp_seed), config.max_perspective)
        if fire[2]:
            g = ndimage.uniform_filter1d(g, blur, axis=1, mode="constant")
        if fire[3]:
            g = g + sigma * noise
        channels.append(np.clip(g, 0.0, 1.0))
    return RawSample(np.stack(channels), sample.label, sample.source_id)


def template_read(sample: RawSample, spec: SceneSpec, font: GlyphFont) -> str:
    """Nearest-template reading of an unrotated-by-``spec`` scene; a legibility probe.

    Undoes the recorded rotation, crops each glyph cell at its known position
    and picks the closest glyph bitmap in squared error.
    """
    gray = sample.image[0]
    if spec.rotation_deg:
        (h, w), _ = glyph_boxes(spec)
        back = _rotate(gray, -spec.rotation_deg)
        top = (back.shape[0] - h) // 2
        left = (back.shape[1] - w) // 2
        gray = back[top:top + h, left:left + w]
    s = spec.glyph_scale
    _, corners = glyph_boxes(spec)
    names = list(font.alphabet)
    templates = np.stack([np.kron(font.glyph(c), np.ones((s, s))) for c in names])
    out = []
    for top, left in corners:
        cell = gray[top:top + GLYPH_H * s, left:left + GLYPH_W * s]
        if cell.shape != templates.shape[1:]:
            pad = np.zeros(templates.shape[1:])
            pad[:cell.shape[0], :cell.shape[1]] = cell
            cell = pad
        out.append(names[int(np.argmin(((templates - cell) ** 2).sum(axis=(1, 2))))])
    return "".join(out)


def lexicon_words(alphabet: str = DEFAULT_ALPHABET, lengths: Sequence[int] = (1, 99)) -> list:
    lo, hi = lengths
    return [w for w in LEXICON if lo <= len(w) <= hi and all(c in alphabet for c in w)]

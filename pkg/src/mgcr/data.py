"""Synthetic bi-temporal building scenes, tiling/splitting and the on-disk dataset layout."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imageio import load_image, save_image
from .tensor import ConfigurationError
from .text import CaptionRecord, make_record, read_caption_corpus, synthesize_caption, write_caption_corpus

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Building:
    x: int
    y: int
    w: int
    h: int
    fill: float


@dataclass
class SceneTruth:
    buildings: list[Building]
    background_seed: int
    canvas: int

    def __post_init__(self):
        for b in self.buildings:
            if b.x < 0 or b.y < 0 or b.x + b.w > self.canvas or b.y + b.h > self.canvas:
                raise ValueError(f"building {b} leaves the {self.canvas}px canvas")


@dataclass
class ScenePair:
    image_1: np.ndarray
    image_2: np.ndarray
    mask: np.ndarray
    truth_1: SceneTruth
    truth_2: SceneTruth
    caption_1: CaptionRecord
    caption_2: CaptionRecord
    pair_id: str = ""


@dataclass(frozen=True)
class GenConfig:
    canvas: int = 64
    n_min: int = 1
    n_max: int = 6
    change_prob: float = 0.4
    add_changes: bool = True
    texture_amp: float = 0.15
    noise: float = 0.02
    grid: int = 4
    size_min: int = 8
    size_max: int = 20


@dataclass
class SplitManifest:
    train: list[str]
    val: list[str]
    test: list[str]
    ratios: tuple[float, ...]
    seed: int

    def lists(self) -> dict[str, list[str]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("pair_id\tsplit\n")
            for split, ids in self.lists().items():
                for pid in ids:
                    fh.write(f"{pid}\t{split}\n")

    @classmethod
    def read_tsv(cls, path) -> "SplitManifest":
        lists = {s: [] for s in SPLITS}
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        for line in lines[1:]:
            if line.strip():
                pid, split = line.split("\t")
                lists[split].append(pid)
        return cls(lists["train"], lists["val"], lists["test"], (), -1)


# ----------------------------------------------------------------- rendering


def rasterize(buildings: Sequence[Building], canvas: int) -> np.ndarray:
    mask = np.zeros((canvas, canvas), dtype=bool)
    for b in buildings:
        mask[b.y:b.y + b.h, b.x:b.x + b.w] = True
    return mask


def value_noise(rng: np.random.Generator, canvas: int, cells: int = 8) -> np.ndarray:
    """Smooth [canvas, canvas] texture: bilinear interpolation of a random lattice."""
    lattice = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    t = np.linspace(0, cells, canvas, endpoint=False)
    i = t.astype(int)
    f = t - i
    f = f * f * (3 - 2 * f)
    rows = lattice[i] * (1 - f)[:, None] + lattice[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def render_background(seed: int, canvas: int, texture_amp: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    tex = value_noise(rng, canvas)
    base = np.array([0.30, 0.42, 0.25]) + rng.uniform(-0.05, 0.05, size=3)
    img = base[None, None, :] * (1.0 + texture_amp * tex[:, :, None])
    # one road, unchanged between epochs
    pos = int(rng.integers(0, canvas - 4))
    if rng.random() < 0.5:
        img[pos:pos + 3, :, :] = 0.45
    else:
        img[:, pos:pos + 3, :] = 0.45
    return img


def render_scene(truth: SceneTruth, background: np.ndarray, rng: np.random.Generator,
                 gain: float, noise: float) -> np.ndarray:
    img = background * gain
    for b in truth.buildings:
        roof = np.array([b.fill, b.fill * 0.92, b.fill * 0.85])
        img[b.y:b.y + b.h, b.x:b.x + b.w, :] = roof
    img = img + rng.normal(0.0, noise, size=img.shape)
    # quantised to 8 bits so PNG round trips are exact
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _overlaps(a: Building, b: Building, gap: int) -> bool:
    return not (a.x + a.w + gap <= b.x or b.x + b.w + gap <= a.x
                or a.y + a.h + gap <= b.y or b.y + b.h + gap <= a.y)


def _place(rng, cfg: GenConfig, existing: list[Building], tries: int = 50) -> Building | None:
    g = cfg.grid
    sizes = np.arange(cfg.size_min, cfg.size_max + 1, g)
    for _ in range(tries):
        w, h = (int(rng.choice(sizes)) for _ in range(2))
        x = int(rng.integers(0, (cfg.canvas - w) // g + 1)) * g
        y = int(rng.integers(0, (cfg.canvas - h) // g + 1)) * g
        cand = Building(x, y, w, h, float(rng.uniform(0.6, 0.95)))
        if not any(_overlaps(cand, b, g) for b in existing):
            return cand
    return None


def generate_scene_pair(seed: int, cfg: GenConfig = GenConfig(), pair_id: str = "") -> ScenePair:
    """Deterministic pair: epoch 2 drops buildings with ``change_prob`` and adds as many on average."""
    if cfg.canvas % 32:
        raise ConfigurationError(f"canvas {cfg.canvas} is not divisible by 32")
    rng = np.random.default_rng(seed)
    bg_seed = int(rng.integers(0, 2**31 - 1))
    first: list[Building] = []
    for _ in range(int(rng.integers(cfg.n_min, cfg.n_max + 1))):
        b = _place(rng, cfg, first)
        if b is not None:
            first.append(b)
    second = [b for b in first if rng.random() >= cfg.change_prob]
    n_add = int(rng.binomial(len(first), cfg.change_prob)) if cfg.add_changes else 0
    for _ in range(n_add):
        b = _place(rng, cfg, first + second)
        if b is not None:
            second.append(b)
    truth_1 = SceneTruth(first, bg_seed, cfg.canvas)
    truth_2 = SceneTruth(second, bg_seed, cfg.canvas)
    background = render_background(bg_seed, cfg.canvas, cfg.texture_amp)
    image_1 = render_scene(truth_1, background, rng, 1.0, cfg.noise)
    image_2 = render_scene(truth_2, background, rng, float(rng.uniform(0.9, 1.1)), cfg.noise)
    mask = rasterize(first, cfg.canvas) ^ rasterize(second, cfg.canvas)
    pid = pair_id or f"pair{seed:06d}"
    cap_1 = make_record(pid, 1, synthesize_caption(truth_1))
    cap_2 = make_record(pid, 2, synthesize_caption(truth_2))
    return ScenePair(image_1, image_2, mask, truth_1, truth_2, cap_1, cap_2, pid)


# -------------------------------------------------------------- tiling/split


def tile_grid(array: np.ndarray, tile: int) -> list[np.ndarray]:
    """Non-overlapping row-major tiles of an [H, W, ...] array."""
    h, w = array.shape[:2]
    for name, side in (("height", h), ("width", w)):
        if side % tile:
            raise ValueError(f"image {name} {side} is not divisible by tile size {tile}")
    return [array[r:r + tile, c:c + tile] for r in range(0, h, tile) for c in range(0, w, tile)]


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    total = float(sum(ratios))
    quotas = [n * r / total for r in ratios]
    sizes = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_ids(ids: Sequence[str], ratios=(7, 2, 1), seed: int = 0) -> SplitManifest:
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n_train, n_val, _ = largest_remainder(len(ids), ratios)
    return SplitManifest(shuffled[:n_train], shuffled[n_train:n_train + n_val],
                         shuffled[n_train + n_val:], tuple(ratios), seed)


def tile_and_split(images: Sequence, tile_size: int, ratios=(7, 2, 1), seed: int = 0,
                   out_dir=None) -> tuple[SplitManifest, dict[str, list[np.ndarray]]]:
    """Tile every item (an array, or a tuple of co-registered arrays) and split the tiles.

    With ``out_dir`` each tile component is written as ``{split}/{tile_id}/{k}.pgm|png``.
    """
    tiles: dict[str, list[np.ndarray]] = {}
    for n, item in enumerate(images):
        parts = item if isinstance(item, (tuple, list)) else (item,)
        per_part = [tile_grid(np.asarray(a), tile_size) for a in parts]
        for t, comps in enumerate(zip(*per_part)):
            tiles[f"img{n:04d}_t{t:03d}"] = list(comps)
    manifest = split_ids(list(tiles), ratios, seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        for split, ids in manifest.lists().items():
            for tid in ids:
                d = out_dir / split / tid
                d.mkdir(parents=True, exist_ok=True)
                for k, comp in enumerate(tiles[tid]):
                    ext = "png" if comp.ndim == 3 else "pgm"
                    save_image(d / f"{k}.{ext}", comp)
        manifest.write_tsv(out_dir / "split.tsv")
    return manifest, tiles


def tile_truth(truth: SceneTruth, row: int, col: int, tile: int) -> SceneTruth:
    """Buildings clipped to one tile, in tile coordinates."""
    x0, y0 = col * tile, row * tile
    out = []
    for b in truth.buildings:
        x1, y1 = max(b.x, x0), max(b.y, y0)
        x2, y2 = min(b.x + b.w, x0 + tile), min(b.y + b.h, y0 + tile)
        if x2 > x1 and y2 > y1:
            out.append(Building(x1 - x0, y1 - y0, x2 - x1, y2 - y1, b.fill))
    return SceneTruth(out, truth.background_seed, tile)


def tile_scene_pair(pair: ScenePair, tile: int) -> list[ScenePair]:
    per_row = pair.mask.shape[0] // tile
    im1, im2, masks = (tile_grid(a, tile) for a in (pair.image_1, pair.image_2, pair.mask))
    out = []
    for t, (a, b, m) in enumerate(zip(im1, im2, masks)):
        r, c = divmod(t, per_row)
        pid = f"{pair.pair_id}_t{t:03d}"
        t1, t2 = tile_truth(pair.truth_1, r, c, tile), tile_truth(pair.truth_2, r, c, tile)
        out.append(ScenePair(a, b, m, t1, t2, make_record(pid, 1, synthesize_caption(t1)),
                             make_record(pid, 2, synthesize_caption(t2)), pid))
    return out


# ----------------------------------------------------------- dataset on disk


@dataclass
class PairSample:
    pair_id: str
    image_1: np.ndarray
    image_2: np.ndarray
    mask: np.ndarray
    caption_1: CaptionRecord
    caption_2: CaptionRecord
    tokens: list[list[int]] = field(default_factory=list)


def write_pair(directory, pair: ScenePair) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_image(d / "t1.png", pair.image_1)
    save_image(d / "t2.png", pair.image_2)
    save_image(d / "mask.pgm", pair.mask)
    write_caption_corpus(d / "captions.jsonl", [pair.caption_1, pair.caption_2])
    truth = {f"t{i}": [vars(b) for b in t.buildings]
             for i, t in ((1, pair.truth_1), (2, pair.truth_2))}
    (d / "truth.json").write_text(json.dumps(truth, sort_keys=True), encoding="utf-8")


def read_pair(directory) -> PairSample:
    d = Path(directory)
    caps = {rec.temporal_index: rec for rec in read_caption_corpus(d / "captions.jsonl")}
    if set(caps) != {1, 2}:
        raise ValueError(f"{d}: captions.jsonl needs temporal_index 1 and 2")
    mask_path = d / "mask.pgm"
    mask = load_image(mask_path, as_mask=True) if mask_path.exists() else None
    return PairSample(d.name, load_image(d / "t1.png"), load_image(d / "t2.png"), mask,
                      caps[1], caps[2])


def generate_dataset(root, n_pairs: int, cfg: GenConfig = GenConfig(), seed: int = 0,
                     ratios=(7, 2, 1), tile: int | None = None) -> SplitManifest:
    """Write ``n_pairs`` scenes (or their tiles) under ``root/{split}/{pair_id}``."""
    root = Path(root)
    pairs: list[ScenePair] = []
    for n in range(n_pairs):
        pair = generate_scene_pair(seed * 100003 + n, cfg, f"pair{n:05d}")
        pairs.extend(tile_scene_pair(pair, tile) if tile and tile < cfg.canvas else [pair])
    by_id = {p.pair_id: p for p in pairs}
    manifest = split_ids(list(by_id), ratios, seed)
    for split, ids in manifest.lists().items():
        for pid in ids:
            write_pair(root / split / pid, by_id[pid])
    manifest.write_tsv(root / "split.tsv")
    return manifest


def load_split(root, split: str) -> list[PairSample]:
    d = Path(root) / split
    if not d.is_dir():
        raise FileNotFoundError(f"missing data split directory {d}")
    return [read_pair(p) for p in sorted(d.iterdir()) if p.is_dir()]

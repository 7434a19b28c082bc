"""Procedural rectified stereo videos with exact disparity and occlusion ground truth.

Scenes are fronto-parallel layers (rectangles or ellipses) in front of a
textured background plane. Textures are sums of sinusoids evaluated in
continuous layer coordinates, so the right view is rendered exactly rather
than resampled from the left one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DisparitySequence, StereoVideo
from .imageio import read_flat_text, write_disparity, write_flat_text, write_masks, write_video
from .tensor_kernels import DTYPE

BASELINE_RANGE = (0.04, 0.30)
SATURATION_RANGE = (0.0, 1.4)
STRETCH_RANGE = (2 ** -0.2, 2 ** 0.4)
ERASE_PROB = 0.5


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    texture_seed: int
    shape: str  # "rect" or "ellipse"
    cx: float
    cy: float
    rx: float
    ry: float
    depth: float
    vx: float = 0.0
    vy: float = 0.0
    depth_rate: float = 0.0

    def center(self, t: int) -> tuple[float, float]:
        return self.cx + self.vx * t, self.cy + self.vy * t

    def covers(self, x: np.ndarray, y: np.ndarray, t: int) -> np.ndarray:
        cx, cy = self.center(t)
        if self.shape == "rect":
            return (x >= cx - self.rx) & (x < cx + self.rx) & (y >= cy - self.ry) & (y < cy + self.ry)
        if self.shape == "ellipse":
            return ((x - cx) / self.rx) ** 2 + ((y - cy) / self.ry) ** 2 < 1.0
        raise SceneError(f"unknown layer shape {self.shape!r}")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int = 64
    width: int = 96
    frames: int = 5
    focal: float = 100.0
    baseline: float = 0.1
    background_depth: float = 5.0
    background_texture: int = 0
    integer_disparity: bool = True
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def depth_of(self, layer: Layer | None, t: int) -> float:
        z = self.background_depth if layer is None else layer.depth + layer.depth_rate * t
        if z <= 0:
            raise SceneError(f"layer depth must be positive, got {z} at frame {t}")
        if self.integer_disparity:
            # snap to the depth whose disparity is the nearest integer
            return self.focal * self.baseline / max(round(self.focal * self.baseline / z), 1)
        return z

    def disparity_of(self, layer: Layer | None, t: int) -> float:
        d = self.focal * self.baseline / self.depth_of(layer, t)
        return float(round(d)) if self.integer_disparity else d

    def validate(self) -> None:
        if self.height < 1 or self.width < 1 or self.frames < 1:
            raise SceneError("scene extents must be positive")
        if self.focal <= 0 or self.baseline <= 0:
            raise SceneError("focal length and baseline must be positive")
        for t in range(self.frames):
            for i, layer in enumerate((None, *self.layers)):
                d = self.disparity_of(layer, t)
                if d >= self.width:
                    name = "background" if layer is None else f"layer {i - 1}"
                    raise SceneError(f"{name} disparity {d:.2f} px at frame {t} is not below the width {self.width}")


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    video: StereoVideo
    disparity: DisparitySequence  # conventional sign: right column = left column - d
    occlusion: np.ndarray  # [T, H, W] left pixels whose match is covered in the right view
    in_view: np.ndarray  # [T, H, W] left pixels whose match column lies inside the right frame


def _texture(seed: int, u: np.ndarray, v: np.ndarray, n_waves: int = 6) -> np.ndarray:
    """Band-limited color noise in [0, 1], [3, *u.shape]."""
    rng = np.random.default_rng(seed)
    freq = rng.uniform(0.04, 0.3, n_waves)
    angle = rng.uniform(0, np.pi, n_waves)
    amp = rng.uniform(0.5, 1.0, n_waves)
    phase = rng.uniform(0, 2 * np.pi, (3, n_waves))
    base = rng.uniform(0.3, 0.7, 3)
    out = np.empty((3, *u.shape))
    arg = [2 * np.pi * f * (np.cos(a) * u + np.sin(a) * v) for f, a in zip(freq, angle)]
    for c in range(3):
        acc = sum(a * np.sin(g + p) for a, g, p in zip(amp, arg, phase[c]))
        out[c] = base[c] + 0.3 * acc / amp.sum()
    return out


def _paint_order(spec: SceneSpec, t: int) -> list[tuple[int, Layer | None, float]]:
    """(id, layer, disparity) from far to near; id 0 is the background."""
    items = [(0, None, spec.disparity_of(None, t))]
    items += [(i + 1, layer, spec.disparity_of(layer, t)) for i, layer in enumerate(spec.layers)]
    return sorted(items, key=lambda it: (it[2], it[0]))


def _render(spec: SceneSpec, t: int, xs: np.ndarray, ys: np.ndarray, shift: int):
    """Render the view where a surface with disparity d shows at x - shift * d.

    ``shift`` is 0 for the left view and 1 for the right one; returns image,
    disparity and layer-id maps.
    """
    image = np.zeros((3, *xs.shape))
    disp = np.zeros(xs.shape)
    ids = np.zeros(xs.shape, dtype=np.int64)
    for lid, layer, d in _paint_order(spec, t):
        x_left = xs + shift * d
        if layer is None:
            mask = np.ones(xs.shape, dtype=bool)
            tex = _texture(spec.background_texture, x_left, ys)
        else:
            mask = layer.covers(x_left, ys, t)
            cx, cy = layer.center(t)
            tex = _texture(layer.texture_seed, x_left - cx, ys - cy)
        image = np.where(mask, tex, image)
        disp = np.where(mask, d, disp)
        ids = np.where(mask, lid, ids)
    return image, disp, ids


def _front_id(spec: SceneSpec, t: int, xr: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Id of the surface seen at (possibly fractional) right-view columns."""
    ids = np.zeros(xr.shape, dtype=np.int64)
    for lid, layer, d in _paint_order(spec, t):
        if layer is not None:
            ids = np.where(layer.covers(xr + d, ys, t), lid, ids)
    return ids


def generate(spec: SceneSpec) -> Scene:
    spec.validate()
    h, w = spec.height, spec.width
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    lefts, rights, disps, occ, inview = [], [], [], [], []
    for t in range(spec.frames):
        left, disp, ids = _render(spec, t, xs, ys, 0)
        right, _, _ = _render(spec, t, xs, ys, 1)
        xr = xs - disp
        visible = xr >= 0
        visible &= xr <= w - 1
        occluded = visible & (_front_id(spec, t, xr, ys) != ids)
        lefts.append(left)
        rights.append(right)
        disps.append(disp)
        occ.append(occluded)
        inview.append(visible)
    video = StereoVideo(np.clip(lefts, 0, 1), np.clip(rights, 0, 1), spec.focal, spec.baseline)
    return Scene(spec, video, DisparitySequence(np.array(disps)), np.array(occ), np.array(inview))


def random_spec(seed: int, height: int = 64, width: int = 96, frames: int = 5, n_layers: int = 2,
                max_disparity: float = 24.0, integer_disparity: bool = True, static: bool = False) -> SceneSpec:
    """Randomized scene: baseline ~ U[4 cm, 30 cm], disparities kept below ``max_disparity``."""
    if max_disparity >= width:
        raise SceneError(f"max disparity {max_disparity} must be below the width {width}")
    if max_disparity < 4:
        raise SceneError("max disparity must be at least 4 px")
    rng = np.random.default_rng(seed)
    baseline = float(rng.uniform(*BASELINE_RANGE))
    bg_disp = float(rng.uniform(1.0, min(6.0, max_disparity / 3)))
    bg_depth = float(rng.uniform(3.0, 8.0))
    focal = bg_disp * bg_depth / baseline
    layers = []
    for _ in range(n_layers):
        d = float(rng.uniform(bg_disp + 1.5, max_disparity - 1.0))
        depth = focal * baseline / d
        rx = float(rng.integers(max(width // 12, 2), max(width // 5, 3)))
        ry = float(rng.integers(max(height // 10, 2), max(height // 4, 3)))
        moving = not static
        layers.append(Layer(
            texture_seed=int(rng.integers(1, 2**31)),
            shape=str(rng.choice(["rect", "ellipse"])),
            cx=float(rng.integers(int(rx), width - int(rx))),
            cy=float(rng.integers(int(ry), height - int(ry))),
            rx=rx,
            ry=ry,
            depth=depth,
            vx=float(rng.uniform(-1.5, 1.5)) * moving,
            vy=float(rng.uniform(-1.0, 1.0)) * moving,
            depth_rate=float(rng.uniform(-0.01, 0.01)) * depth * moving,
        ))
    spec = SceneSpec(seed=seed, height=height, width=width, frames=frames, focal=focal, baseline=baseline,
                     background_depth=bg_depth, background_texture=int(rng.integers(1, 2**31)),
                     integer_disparity=integer_disparity, layers=tuple(layers))
    # depth drift may push a layer past the limit over a long clip
    for t in range(frames):
        for layer in layers:
            if spec.disparity_of(layer, t) > max_disparity:
                spec = replace(spec, layers=tuple(replace(la, depth_rate=0.0) for la in spec.layers))
                break
    return spec


def diagnostic_features(shift) -> np.ndarray:
    """One-hot column features [T, 2, W, H, W] for an integer shift map [T, H, W].

    The left feature at (h, w) is one-hot on ``w``; it is forward-warped to the
    right view at column ``w + shift``. When several left pixels land on the
    same right pixel, the one with the smallest shift (the nearest surface in
    conventional disparity) wins. ``argmax`` of the correlation row then sits
    at ``w + shift`` for every pixel that wins its target.
    """
    shift = np.asarray(shift)
    if not np.all(shift == np.round(shift)):
        raise ValueError("diagnostic features need integer shifts")
    shift = shift.astype(np.int64)
    t, h, w = shift.shape
    feats = np.zeros((t, 2, w, h, w), dtype=DTYPE)
    cols = np.arange(w)
    feats[:, 0, cols, :, cols] = 1.0
    for ti in range(t):
        for hi in range(h):
            target = cols + shift[ti, hi]
            # far surfaces first so nearer ones overwrite them
            for wi in np.argsort(-shift[ti, hi], kind="stable"):
                wr = target[wi]
                if 0 <= wr < w:
                    feats[ti, 1, :, hi, wr] = 0.0
                    feats[ti, 1, wi, hi, wr] = 1.0
    return feats


def _saturate(img: np.ndarray, factor: float) -> np.ndarray:
    gray = img.mean(axis=-3, keepdims=True)
    return img + (factor - 1.0) * (img - gray)


def _stretch_rows(frames: np.ndarray, factor: float) -> np.ndarray:
    """Horizontal stretch about the image center, linear resampling, edges clamped."""
    w = frames.shape[-1]
    src = (np.arange(w) + 0.5 - w / 2) / factor + w / 2 - 0.5
    src = np.clip(src, 0, w - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, w - 1)
    t = src - lo
    return frames[..., lo] + t * (frames[..., hi] - frames[..., lo])


def augment(video: StereoVideo, seed: int, saturation: float | None = None, stretch: float | None = None,
            erase_prob: float = ERASE_PROB) -> StereoVideo:
    """Training augmentations, deterministic under ``seed``.

    Saturation of both views scales by a factor ~ U[0, 1.4]; the right view is
    stretched horizontally by ~ U[2^-0.2, 2^0.4] and center-cropped; each right
    frame independently has, with probability ``erase_prob``, one rectangle
    replaced by the frame's mean color. Explicit ``saturation`` / ``stretch``
    override the random draws.
    """
    rng = np.random.default_rng(seed)
    sat = rng.uniform(*SATURATION_RANGE) if saturation is None else saturation
    st = rng.uniform(*STRETCH_RANGE) if stretch is None else stretch
    left = np.asarray(video.left, dtype=np.float64)
    right = np.asarray(video.right, dtype=np.float64)
    left = np.clip(_saturate(left, sat), 0, 1)
    right = np.clip(_saturate(right, sat), 0, 1)
    right = _stretch_rows(right, st)
    _, _, h, w = right.shape
    for t in range(right.shape[0]):
        if rng.random() < erase_prob:
            eh = int(rng.integers(max(h // 10, 1), max(h // 4, 2) + 1))
            ew = int(rng.integers(max(w // 10, 1), max(w // 4, 2) + 1))
            y0 = int(rng.integers(0, h - eh + 1))
            x0 = int(rng.integers(0, w - ew + 1))
            mean = right[t].mean(axis=(1, 2))
            right[t, :, y0 : y0 + eh, x0 : x0 + ew] = mean[:, None, None]
    return StereoVideo(left, right, video.focal, video.baseline)


# --- manifests -------------------------------------------------------------

_LAYER_FIELDS = ("shape", "texture_seed", "cx", "cy", "rx", "ry", "depth", "vx", "vy", "depth_rate")


def spec_to_manifest(spec: SceneSpec) -> dict[str, str]:
    out = {
        "seed": str(spec.seed),
        "height": str(spec.height),
        "width": str(spec.width),
        "frames": str(spec.frames),
        "focal": repr(spec.focal),
        "baseline": repr(spec.baseline),
        "background_depth": repr(spec.background_depth),
        "background_texture": str(spec.background_texture),
        "integer_disparity": str(int(spec.integer_disparity)),
        "layers": str(len(spec.layers)),
    }
    for i, layer in enumerate(spec.layers):
        values = asdict(layer)
        for name in _LAYER_FIELDS:
            v = values[name]
            out[f"layer.{i}.{name}"] = repr(v) if isinstance(v, float) else str(v)
    return out


def spec_from_manifest(m: dict[str, str]) -> SceneSpec:
    try:
        layers = []
        for i in range(int(m.get("layers", "0"))):
            get = lambda name: m[f"layer.{i}.{name}"]  # noqa: E731
            layers.append(Layer(
                texture_seed=int(get("texture_seed")), shape=get("shape"),
                cx=float(get("cx")), cy=float(get("cy")), rx=float(get("rx")), ry=float(get("ry")),
                depth=float(get("depth")), vx=float(get("vx")), vy=float(get("vy")),
                depth_rate=float(get("depth_rate")),
            ))
        spec = SceneSpec(
            seed=int(m["seed"]), height=int(m["height"]), width=int(m["width"]), frames=int(m["frames"]),
            focal=float(m["focal"]), baseline=float(m["baseline"]),
            background_depth=float(m["background_depth"]),
            background_texture=int(m.get("background_texture", "0")),
            integer_disparity=bool(int(m.get("integer_disparity", "1"))), layers=tuple(layers),
        )
    except (KeyError, ValueError) as exc:
        raise SceneError(f"invalid scene manifest: {exc}") from exc
    spec.validate()
    return spec


def write_scene(scene: Scene, directory) -> None:
    """Frames, gt disparity with validity masks, occlusion masks and the manifest."""
    directory = Path(directory)
    write_video(scene.video, directory)
    write_disparity(scene.disparity, directory)
    write_masks(scene.occlusion, directory / "occlusion")
    write_flat_text(directory / "manifest.txt", spec_to_manifest(scene.spec))


def read_spec(path) -> SceneSpec:
    return spec_from_manifest(read_flat_text(path))

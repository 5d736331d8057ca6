"""Data instances, dataset ingestion and procedural datasets."""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .coords import check_pose, grid_coords, ray_bundle
from .errors import ContractError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class DataInstance:
    """Coordinate/target pairs of one signal plus the array the encoder sees.

    ``array`` is (H, W, C) for images or (V, H, W, C) for a stack of views
    whose channels carry colour and per-pixel ray coordinates.
    ``grid_shape`` is the shape the targets reshape to, e.g. (H, W) or
    (V, H, W).
    """

    array: np.ndarray
    coords: np.ndarray
    targets: np.ndarray
    grid_shape: tuple
    instance_id: str = ""
    label: int = -1
    extras: dict = field(default_factory=dict)

    @property
    def num_coords(self):
        return len(self.coords)

    @property
    def kind(self):
        return "lightfield" if self.coords.shape[-1] == 6 else "image"

    def as_image(self, values):
        """Reshape per-coordinate values back onto the pixel grid."""
        return np.asarray(values).reshape(*self.grid_shape, -1)


def image_instance(image, instance_id="", label=-1, coords=None):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[..., None]
    if image.ndim != 3:
        raise ContractError(f"images must be (H, W) or (H, W, C), got shape {image.shape}")
    h, w, c = image.shape
    if coords is None:
        coords = grid_coords(h, w)
    return DataInstance(array=image, coords=coords, targets=image.reshape(-1, c),
                        grid_shape=(h, w), instance_id=instance_id, label=label)


def images_to_instances(images, ids=None, labels=None):
    """Wrap a stack of equally sized images; the coordinate grid is shared."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[..., None]
    coords = grid_coords(images.shape[1], images.shape[2])
    return [image_instance(img, instance_id=(ids[i] if ids is not None else f"{i:05d}"),
                           label=(int(labels[i]) if labels is not None else -1), coords=coords)
            for i, img in enumerate(images)]


def lightfield_instance(views, poses, intrinsics, instance_id=""):
    """Multi-view instance decoded in Plücker ray coordinates.

    The encoder input concatenates each pixel's colour with its ray
    coordinates along the channel axis.
    """
    views = np.asarray(views, dtype=np.float32)
    if views.ndim != 4:
        raise ContractError(f"views must be (V, H, W, C), got shape {views.shape}")
    v, h, w, c = views.shape
    poses = np.asarray(poses, dtype=np.float64)
    if len(poses) != v:
        raise ContractError(f"{v} views but {len(poses)} poses")
    rays = np.stack([ray_bundle(p, intrinsics, h, w) for p in poses])       # (V, H*W, 6)
    array = np.concatenate([views, rays.reshape(v, h, w, 6).astype(np.float32)], axis=-1)
    return DataInstance(array=array, coords=rays.reshape(-1, 6), targets=views.reshape(-1, c),
                        grid_shape=(v, h, w), instance_id=instance_id,
                        extras={"poses": poses, "intrinsics": tuple(float(x) for x in intrinsics)})


# ------------------------------------------------------------------ images
def read_image(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def write_image(path, image):
    """Write an (H, W), (H, W, 1) or (H, W, 3) array in [0, 1] as 8-bit PNG."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim == 3 and image.shape[-1] == 1:
        image = image[..., 0]
    Image.fromarray(np.round(image * 255.0).astype(np.uint8)).save(path)


def load_image_dir(path):
    """Load every image under ``path`` as an instance.

    Files directly in ``path`` are unlabeled; files inside subdirectories get
    the subdirectory's sorted index as class label.  All images must share a
    size so they can be batched.
    """
    if not os.path.isdir(path):
        raise OSError(f"dataset directory {path} does not exist")
    entries = sorted(os.listdir(path))
    files = [(os.path.join(path, f), -1) for f in entries if f.lower().endswith(IMAGE_SUFFIXES)]
    classes = [d for d in entries if os.path.isdir(os.path.join(path, d))]
    for label, cls in enumerate(classes):
        sub = os.path.join(path, cls)
        files += [(os.path.join(sub, f), label) for f in sorted(os.listdir(sub))
                  if f.lower().endswith(IMAGE_SUFFIXES)]
    if not files:
        raise OSError(f"no images found in {path}")
    images = [read_image(f) for f, _ in files]
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise OSError(f"images in {path} have differing sizes {sorted(shapes)}")
    ids = [os.path.relpath(f, path) for f, _ in files]
    return images_to_instances(np.stack(images), ids=ids, labels=[lab for _, lab in files])


def synthetic_images(n, size=32, seed=0, channels=3):
    """Procedural test images: smooth gradients, soft discs and boxes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    out = np.empty((n, size, size, channels), dtype=np.float32)
    for i in range(n):
        c0, c1 = rng.uniform(0.1, 0.9, (2, channels))
        angle = rng.uniform(0, 2 * np.pi)
        t = 0.5 + 0.5 * np.cos(angle) * (xx - 0.5) * 2 * 0.7 + 0.5 * np.sin(angle) * (yy - 0.5) * 2 * 0.7
        img = c0 * (1 - t[..., None]) + c1 * t[..., None]
        for _ in range(rng.integers(2, 5)):
            color = rng.uniform(0, 1, channels)
            cy, cx = rng.uniform(0.15, 0.85, 2)
            if rng.random() < 0.5:
                r = rng.uniform(0.1, 0.25)
                dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) - r
            else:
                hy, hx = rng.uniform(0.08, 0.22, 2)
                dist = np.maximum(np.abs(yy - cy) - hy, np.abs(xx - cx) - hx)
            alpha = 1.0 / (1.0 + np.exp(dist / 0.02))
            img = img * (1 - alpha[..., None]) + color * alpha[..., None]
        out[i] = np.clip(img, 0, 1)
    return out


# ---------------------------------------------------------- light fields
@dataclass
class SceneSpec:
    """Procedural scene: one textured object seen from a ring of cameras."""

    shape: str = "cube"
    num_views: int = 8
    height: int = 32
    width: int = 32
    radius: float = 3.0
    elevation_deg: float = 20.0
    fov_deg: float = 40.0
    yaw_deg: float = 30.0
    angle_offset_deg: float = 0.0
    supersample: int = 2


def intrinsics_for(spec):
    f = 0.5 * spec.width / math.tan(math.radians(spec.fov_deg) / 2)
    return (f, f, spec.width / 2.0, spec.height / 2.0)


def look_at_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)):
    """Camera-to-world 3x4 matrix for a camera (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.concatenate([np.stack([x, y, z], axis=1), eye[:, None]], axis=1)


def ring_pose(spec, angle_deg):
    theta = math.radians(angle_deg)
    phi = math.radians(spec.elevation_deg)
    eye = spec.radius * np.array([math.cos(phi) * math.sin(theta), math.sin(phi),
                                  math.cos(phi) * math.cos(theta)])
    return look_at_pose(eye)


def ring_poses(spec):
    step = 360.0 / spec.num_views
    return np.stack([ring_pose(spec, spec.angle_offset_deg + i * step) for i in range(spec.num_views)])


def _shade_rays(origins, dirs, spec):
    """Colour of each ray: an object over a direction-dependent sky."""
    light = np.array([0.4, 0.8, 0.45])
    light /= np.linalg.norm(light)
    sky_t = 0.5 + 0.5 * dirs[:, 1]
    color = (np.array([0.85, 0.88, 0.95]) * sky_t[:, None]
             + np.array([0.35, 0.30, 0.28]) * (1 - sky_t[:, None]))

    yaw = math.radians(spec.yaw_deg)
    rot = np.array([[math.cos(yaw), 0, math.sin(yaw)], [0, 1, 0], [-math.sin(yaw), 0, math.cos(yaw)]])
    o = origins @ rot          # world -> object frame (rot is orthonormal)
    d = dirs @ rot
    if spec.shape == "cube":
        half = 0.6
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmax > 0)
        p = o + tmin[:, None] * d
        axis = np.argmax(np.abs(p) / half, axis=1)
        normal = np.zeros_like(p)
        normal[np.arange(len(p)), axis] = np.sign(p[np.arange(len(p)), axis])
        palette = np.array([[0.9, 0.3, 0.2], [0.2, 0.7, 0.3], [0.2, 0.35, 0.9]])
        base = palette[axis]
        uv = np.sort(np.abs(p), axis=1)[:, :2] / half
        texture = 0.85 + 0.15 * np.cos(np.pi * uv[:, 0]) * np.cos(np.pi * uv[:, 1])
    elif spec.shape == "sphere":
        r = 0.8
        b = np.sum(o * d, axis=1)
        disc = b * b - (np.sum(o * o, axis=1) - r * r)
        hit = disc > 0
        t = -b - np.sqrt(np.maximum(disc, 0))
        hit &= t > 0
        p = o + t[:, None] * d
        normal = p / r
        base = 0.5 + 0.4 * normal[:, [0, 1, 2]] * np.array([1.0, -1.0, 1.0])
        texture = 0.85 + 0.15 * np.cos(3 * np.arctan2(normal[:, 0], normal[:, 2]))
    else:
        raise ContractError(f"unknown scene shape {spec.shape!r}")
    lambert = np.clip(normal @ (light @ rot), 0, 1)
    obj = base * texture[:, None] * (0.35 + 0.65 * lambert[:, None])
    return np.where(hit[:, None], obj, color)


def render_view(spec, pose, intrinsics=None):
    """Deterministic supersampled ray-cast of the scene, (H, W, 3) in [0, 1]."""
    pose = check_pose(pose)
    fx, fy, cx, cy = intrinsics if intrinsics is not None else intrinsics_for(spec)
    s = spec.supersample
    offs = (np.arange(s) + 0.5) / s
    u = (np.arange(spec.width)[:, None] + offs[None]).ravel()
    v = (np.arange(spec.height)[:, None] + offs[None]).ravel()
    uu, vv = np.meshgrid(u, v, indexing="xy")
    cam = np.stack([(uu - cx) / fx, (vv - cy) / fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    dirs = cam @ pose[:, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(pose[:, 3], dirs.shape)
    rgb = _shade_rays(origins, dirs, spec).reshape(spec.height, s, spec.width, s, 3)
    return np.clip(rgb.mean(axis=(1, 3)), 0, 1).astype(np.float32)


def load_synthetic_scene(spec=None):
    """Render the ring of views of ``spec`` into a light-field instance."""
    spec = spec or SceneSpec()
    poses = ring_poses(spec)
    intr = intrinsics_for(spec)
    views = np.stack([render_view(spec, p, intr) for p in poses])
    inst = lightfield_instance(views, poses, intr, instance_id=f"synthetic-{spec.shape}")
    inst.extras["spec"] = spec
    return inst


def write_scene_dir(path, views, poses, intrinsics):
    """Store views as PNGs plus ``cameras.json`` with poses and intrinsics."""
    os.makedirs(path, exist_ok=True)
    for i, view in enumerate(views):
        write_image(os.path.join(path, f"view_{i:03d}.png"), view)
    np.save(os.path.join(path, "views.npy"), np.asarray(views, dtype=np.float32))
    meta = {"intrinsics": [float(x) for x in intrinsics],
            "poses": np.asarray(poses, dtype=np.float64).tolist()}
    with open(os.path.join(path, "cameras.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_scene_dir(path):
    """Read a directory written by :func:`write_scene_dir`.

    Exact float views (``views.npy``) are preferred over the 8-bit PNGs.
    """
    cam_path = os.path.join(path, "cameras.json")
    try:
        with open(cam_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read camera file {cam_path}: {exc}") from exc
    raw = os.path.join(path, "views.npy")
    if os.path.exists(raw):
        views = np.load(raw)
    else:
        files = sorted(f for f in os.listdir(path) if f.lower().endswith(IMAGE_SUFFIXES))
        if not files:
            raise OSError(f"no views found in {path}")
        views = np.stack([read_image(os.path.join(path, f)) for f in files])
    return lightfield_instance(views, meta["poses"], meta["intrinsics"], instance_id=os.path.basename(path))

"""Dataset ingestion, PLY point clouds and checkpoints, PNG images, synthetic scenes."""
import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.recfunctions import repack_fields
from PIL import Image
from plyfile import PlyData, PlyElement, PlyHeaderParseError, PlyParseError

from splatkit.camera import Camera
from splatkit.scene import Scene, logit
from splatkit.sh import dc_to_rgb, num_coeffs, rgb_to_dc

TEST_EVERY = 8

class DatasetError(Exception):
    """Base class for dataset and checkpoint problems."""


class MissingFileError(DatasetError):
    pass


class MalformedFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class LayoutError(DatasetError):
    pass


# ---------------------------------------------------------------- PLY


def read_ply_vertices(path):
    """Vertex element of a PLY file (ASCII or binary) as a numpy structured array."""
    if not os.path.exists(path):
        raise MissingFileError(f"missing file: {path}")
    try:
        ply = PlyData.read(str(path))
        return np.array(ply["vertex"].data)
    except KeyError:
        raise MalformedFileError(f"{path}: no vertex element") from None
    except (PlyParseError, PlyHeaderParseError, ValueError, EOFError) as exc:
        raise MalformedFileError(f"{path}: cannot parse PLY ({exc})") from None


def write_ply(path, data, ascii=False):
    """Write a structured array as the vertex element of a PLY file."""
    el = PlyElement.describe(repack_fields(np.asarray(data)), "vertex")
    PlyData([el], text=ascii, byte_order="<").write(str(path))


def write_points_ply(path, positions, colors_u8, ascii=False):
    positions = np.asarray(positions)
    data = np.zeros(positions.shape[0], dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                                ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    data["x"], data["y"], data["z"] = positions.T
    data["red"], data["green"], data["blue"] = np.asarray(colors_u8).T
    write_ply(path, data, ascii=ascii)


def read_points_ply(path):
    v = read_ply_vertices(path)
    for name in ("x", "y", "z", "red", "green", "blue"):
        if name not in v.dtype.names:
            raise LayoutError(f"{path}: point cloud is missing field {name!r}")
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    col = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64) / 255.0
    return pos, col


# ---------------------------------------------------------------- checkpoints


def _checkpoint_fields(sh_degree):
    rest = 3 * (num_coeffs(sh_degree) - 1)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def save_checkpoint(scene, path):
    """Binary little-endian PLY in the common splatting layout (log scales, logit opacity)."""
    n = len(scene)
    names = _checkpoint_fields(scene.sh_degree)
    data = np.zeros(n, dtype=[(k, "<f4") for k in names])
    data["x"], data["y"], data["z"] = scene.mu.T
    for c in range(3):
        data[f"f_dc_{c}"] = scene.sh[:, 0, c]
    k = num_coeffs(scene.sh_degree) - 1
    # channel-major: f_rest_{c*k + j} holds coefficient j+1 of channel c
    rest = np.transpose(scene.sh[:, 1:, :], (0, 2, 1)).reshape(n, -1)
    for i in range(3 * k):
        data[f"f_rest_{i}"] = rest[:, i]
    data["opacity"] = scene.opacity_logit
    for i in range(3):
        data[f"scale_{i}"] = scene.log_scale[:, i]
    for i in range(4):
        data[f"rot_{i}"] = scene.rot[:, i]
    write_ply(path, data)


def load_checkpoint(path, dtype=np.float64):
    v = read_ply_vertices(path)
    have = set(v.dtype.names)
    n_rest = sum(1 for k in have if k.startswith("f_rest_"))
    degree = {0: 0, 9: 1, 24: 2, 45: 3}.get(n_rest)
    if degree is None:
        raise LayoutError(f"{path}: {n_rest} f_rest fields do not match any SH degree")
    for name in _checkpoint_fields(degree):
        if name not in have:
            raise LayoutError(f"{path}: checkpoint is missing field {name!r}")
    n = v.shape[0]
    k = num_coeffs(degree) - 1
    sh = np.zeros((n, k + 1, 3))
    for c in range(3):
        sh[:, 0, c] = v[f"f_dc_{c}"]
    if k:
        rest = np.stack([v[f"f_rest_{i}"] for i in range(3 * k)], axis=1).reshape(n, 3, k)
        sh[:, 1:, :] = np.transpose(rest, (0, 2, 1))
    scene = Scene(
        mu=np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64),
        rot=np.stack([v[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64),
        log_scale=np.stack([v[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64),
        opacity_logit=v["opacity"].astype(np.float64),
        sh=sh,
        sh_degree=degree,
    )
    return scene.astype(dtype)


# ---------------------------------------------------------------- images and cameras


def load_png(path):
    if not os.path.exists(path):
        raise MissingFileError(f"missing image: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise MalformedFileError(f"{path}: cannot decode image ({exc})") from None
    return arr / 255.0


def to_u8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img):
    Image.fromarray(to_u8(img), mode="RGB").save(path, format="PNG")


def camera_to_record(cam, image_name=None):
    rec = {"id": int(cam.id), "width": int(cam.width), "height": int(cam.height),
           "fx": float(cam.fx), "fy": float(cam.fy), "cx": float(cam.cx), "cy": float(cam.cy),
           "near": float(cam.near), "world_to_cam": [float(x) for x in cam.world_to_cam.reshape(-1)]}
    if image_name is not None:
        rec["image"] = image_name
    return rec


def _image_name(rec):
    return rec.get("image", f"{int(rec['id']):05d}.png")


def read_cameras(path):
    if not os.path.exists(path):
        raise MissingFileError(f"missing file: {path}")
    try:
        with open(path) as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(records, dict):
        records = records.get("cameras")
    if not isinstance(records, list):
        raise MalformedFileError(f"{path}: expected a list of camera records")
    cams = []
    for i, rec in enumerate(records):
        try:
            w2c = np.asarray(rec["world_to_cam"], dtype=np.float64)
            if w2c.size != 16:
                raise ValueError("world_to_cam needs 16 numbers")
            cams.append(Camera(int(rec["width"]), int(rec["height"]), float(rec["fx"]), float(rec["fy"]),
                               float(rec["cx"]), float(rec["cy"]), w2c.reshape(4, 4),
                               near=float(rec.get("near", 0.2)), id=int(rec["id"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFileError(f"{path}: camera record {i} is invalid ({exc!r})") from None
    return cams, records


def write_cameras(path, cams, image_names=None):
    names = image_names or [f"{int(c.id):05d}.png" for c in cams]
    with open(path, "w") as fh:
        json.dump([camera_to_record(c, n) for c, n in zip(cams, names)], fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------- datasets


def default_split(n_views):
    """Every eighth view (starting at 0) is held out, unless there is only one view."""
    idx = np.arange(n_views)
    if n_views < 2:
        return idx, idx[:0]
    test = idx % TEST_EVERY == 0
    return idx[~test], idx[test]


@dataclass
class Dataset:
    cameras: list
    images: list
    init_positions: np.ndarray
    init_colors: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise DimensionMismatchError(f"{len(self.cameras)} cameras but {len(self.images)} images")
        for cam, img in zip(self.cameras, self.images):
            if img.shape[:2] != (cam.height, cam.width):
                raise DimensionMismatchError(
                    f"camera {cam.id} is {cam.width}x{cam.height} but its image is {img.shape[1]}x{img.shape[0]}")

    def view(self, i):
        return self.cameras[i], self.images[i]


def load_dataset(path):
    cams, records = read_cameras(os.path.join(path, "cameras.json"))
    images = [load_png(os.path.join(path, "images", _image_name(r))) for r in records]
    pos, col = read_points_ply(os.path.join(path, "points3d.ply"))
    train, test = default_split(len(cams))
    return Dataset(cams, images, pos, col, train, test)


def save_dataset(ds, path):
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    names = [f"{int(c.id):05d}.png" for c in ds.cameras]
    write_cameras(os.path.join(path, "cameras.json"), ds.cameras, names)
    for name, img in zip(names, ds.images):
        save_png(os.path.join(path, "images", name), img)
    write_points_ply(os.path.join(path, "points3d.ply"), ds.init_positions, to_u8(ds.init_colors))


def ring_cameras(n_views, width, height, radius=3.0, fov_deg=45.0, elevations=(12.0, 32.0)):
    """Cameras evenly spaced in azimuth around the z axis, alternating between two elevations."""
    fx = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    cams = []
    for i in range(n_views):
        az = 2 * np.pi * i / n_views
        el = np.radians(elevations[i % len(elevations)])
        eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera.look_at(eye, np.zeros(3), width, height, fx, id=i))
    return cams


def random_scene(n, rng, sh_degree=0, scale_range=(0.015, 0.06), opacity_range=(0.6, 0.95)):
    """Random Gaussians inside the unit cube centred at the origin."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    sh = np.zeros((n, num_coeffs(sh_degree), 3))
    sh[:, 0, :] = rgb_to_dc(rng.uniform(0.05, 0.95, size=(n, 3)))
    return Scene(
        mu=rng.uniform(-0.5, 0.5, size=(n, 3)),
        rot=q,
        log_scale=np.log(rng.uniform(*scale_range, size=(n, 3))),
        opacity_logit=logit(rng.uniform(*opacity_range, size=n)),
        sh=sh,
        sh_degree=sh_degree,
    )


def generate_synthetic(out_dir, n_gaussians=500, n_views=64, width=128, height=128, seed=0,
                       init_noise=0.05):
    """Random ground-truth scene, ring cameras, rendered PNGs, noisy init points.

    Writes ``cameras.json``, ``images/``, ``points3d.ply`` and ``gt_scene.ply`` and returns
    ``(dataset, gt_scene)``; the dataset is re-read from disk so images carry 8-bit quantization.
    """
    from splatkit.render import render

    if n_views < 2:
        raise ValueError("synthetic datasets need at least two views")
    rng = np.random.default_rng(seed)
    gt = random_scene(n_gaussians, rng)
    cams = ring_cameras(n_views, width, height)
    images = [render(gt, cam).image for cam in cams]
    noisy = gt.mu + rng.normal(0.0, init_noise, size=gt.mu.shape)
    colors = np.clip(dc_to_rgb(gt.sh[:, 0, :]), 0.0, 1.0)
    train, test = default_split(n_views)
    ds = Dataset(cams, images, noisy, colors, train, test)
    save_dataset(ds, out_dir)
    save_checkpoint(gt, os.path.join(out_dir, "gt_scene.ply"))
    return load_dataset(out_dir), gt


def scene_extent(cameras):
    """1.1 x the largest camera-centre distance from the mean centre."""
    centers = np.array([c.center for c in cameras])
    return 1.1 * float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) or 1.0

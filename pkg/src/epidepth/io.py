"""Scene directories: ``scene.json`` plus PNG images, ``.flo`` flows and PFM depth.

Layout written by :func:`save_scene`::

    scene.json
    image_<id>.png
    flow_<src>_<dst>.flo
    gt_depth_<id>.pfm        (bundles only)

Paths inside ``scene.json`` are relative to the directory holding it.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InconsistentScene, IoFailure, MissingFlow
from .flow import read_flo, write_flo
from .fuse import DepthMap, PointCloud, Scene, read_pfm, read_ply, write_pfm, write_ply
from .geometry import CameraView

SCENE_FILE = "scene.json"


def _write(path: Path, data: bytes):
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def encode_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_scene(scene: Scene, out_dir, gt_depth=None) -> Path:
    """Write ``scene`` (and ``gt_depth``, defaulting to a bundle's own) into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    if gt_depth is None:
        gt_depth = getattr(scene, "gt_depth", None) or {}
    entries = []
    for v in scene.views:
        entry = {
            "id": v.id,
            "width": v.width,
            "height": v.height,
            "fx": v.fx,
            "fy": v.fy,
            "cx": v.cx,
            "cy": v.cy,
            "rotation": v.rotation.tolist(),
            "translation": v.translation.tolist(),
            "flows": {},
        }
        if v.image is not None:
            entry["image"] = f"image_{v.id}.png"
            _write(out / entry["image"], encode_png(v.image))
        for (s, d), flow in sorted(scene.flows.items()):
            if s == v.id:
                name = f"flow_{s}_{d}.flo"
                entry["flows"][str(d)] = name
                _write(out / name, write_flo(flow))
        if v.id in gt_depth:
            entry["gt_depth"] = f"gt_depth_{v.id}.pfm"
            _write(out / entry["gt_depth"], write_pfm(gt_depth[v.id]))
        entries.append(entry)
    doc = {"views": entries}
    for key in ("preset", "seed"):
        if hasattr(scene, key):
            doc[key] = getattr(scene, key)
    _write(out / SCENE_FILE, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    return out


def _scene_path(path) -> Path:
    p = Path(path)
    return p / SCENE_FILE if p.is_dir() else p


def load_scene(path) -> tuple[Scene, dict[int, DepthMap]]:
    """Read a scene directory (or its ``scene.json``); returns ``(scene, gt_depth)``.

    Raises ``FileNotFoundError`` for a missing description or image,
    :class:`MissingFlow` for a missing flow file and :class:`FormatError` for a
    malformed description.
    """
    json_path = _scene_path(path)
    root = json_path.parent
    try:
        doc = json.loads(_read(json_path))
        raw_views = doc["views"]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed scene description {json_path}: {exc}") from None

    views, flows, gt = [], {}, {}
    for e in raw_views:
        try:
            image = decode_png(_read(root / e["image"])) if e.get("image") else None
            view = CameraView(
                e["id"], e["width"], e["height"], e["fx"], e["fy"], e["cx"], e["cy"],
                np.array(e["rotation"], dtype=np.float64), np.array(e["translation"], dtype=np.float64), image,
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed view entry in {json_path}: {exc}") from None
        views.append(view)
        for dst, name in e.get("flows", {}).items():
            try:
                data = _read(root / name)
            except FileNotFoundError:
                raise MissingFlow(f"flow file {root / name} is missing") from None
            flows[(view.id, int(dst))] = read_flo(data)
        if e.get("gt_depth"):
            gt[view.id] = read_pfm(_read(root / e["gt_depth"]), view.id)

    # .flo carries no ids or target size; restore them from the description
    by_id = {v.id: v for v in views}
    for (s, d), f in list(flows.items()):
        if d not in by_id:
            raise InconsistentScene(f"flow {s}->{d} targets an unknown view")
        flows[(s, d)] = f.replace(src_id=s, dst_id=d, dst_width=by_id[d].width, dst_height=by_id[d].height)
    return Scene(views, flows), gt


def save_run(out_dir, depth_maps, cloud: PointCloud, summary: dict) -> Path:
    """Write ``cloud.ply``, ``depth_<id>.pfm`` and ``summary.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    _write(out / "cloud.ply", write_ply(cloud))
    for vid, dm in sorted(depth_maps.items()):
        _write(out / f"depth_{vid}.pfm", write_pfm(dm))
    _write(out / "summary.json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    return out


def load_run(run_dir) -> tuple[dict[int, DepthMap], PointCloud, dict]:
    """Inverse of :func:`save_run`; cloud provenance comes back as ``-1``."""
    root = Path(run_dir)
    summary = json.loads(_read(root / "summary.json"))
    depth_maps = {int(v): read_pfm(_read(root / f"depth_{v}.pfm"), int(v)) for v in summary["views"]}
    cloud = read_ply(_read(root / "cloud.ply"))
    return depth_maps, cloud, summary

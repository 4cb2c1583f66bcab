"""File formats: scenes, detections, matches, boxes, configs, reports.

All files are UTF-8 JSON. LiDAR clouds may live inline as nested lists or in
a binary side file of little-endian 32-bit floats, row-major xyz triples,
referenced by a path relative to the scene file. Malformed input raises
SchemaError carrying the JSON path of the offending element.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .matching import MatchedPair, MatchResult
from .pipeline import Frame, PipelineConfig, PredBox, Scene, config_from_dict
from .scene import BBox2D, Box3D, CameraModel, CameraRig, Detection2D, Pose, SceneObject


class SchemaError(ValueError):
    """A file does not match its documented schema; message carries the path."""


def _fail(path: str, message: str):
    raise SchemaError(f"{path}: {message}")


def _get(mapping, key, path: str):
    if not isinstance(mapping, dict):
        _fail(path, f"expected an object, got {type(mapping).__name__}")
    if key not in mapping:
        _fail(path, f"missing required key '{key}'")
    return mapping[key]


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {type(value).__name__}")
    return value


def _str(value, path: str) -> str:
    if not isinstance(value, str):
        _fail(path, f"expected a string, got {type(value).__name__}")
    return value


def _list(value, path: str, length: int | None = None) -> list:
    if not isinstance(value, list):
        _fail(path, f"expected a list, got {type(value).__name__}")
    if length is not None and len(value) != length:
        _fail(path, f"expected {length} elements, got {len(value)}")
    return value


def _floats(value, path: str, length: int) -> list[float]:
    return [_num(v, f"{path}[{i}]") for i, v in enumerate(_list(value, path, length))]


def _load_json(path) -> object:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def _dump_json(path, payload) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# -- cameras and scenes -------------------------------------------------------


def _camera_to_dict(cam: CameraModel) -> dict:
    return {
        "id": cam.id,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "pose": {"q": list(cam.pose.q), "t": list(cam.pose.t)},
    }


def _camera_from_dict(data, path: str) -> CameraModel:
    pose_data = _get(data, "pose", path)
    pose = Pose(
        q=tuple(_floats(_get(pose_data, "q", f"{path}.pose"), f"{path}.pose.q", 4)),
        t=tuple(_floats(_get(pose_data, "t", f"{path}.pose"), f"{path}.pose.t", 3)),
    )
    return CameraModel(
        id=_str(_get(data, "id", path), f"{path}.id"),
        fx=_num(_get(data, "fx", path), f"{path}.fx"),
        fy=_num(_get(data, "fy", path), f"{path}.fy"),
        cx=_num(_get(data, "cx", path), f"{path}.cx"),
        cy=_num(_get(data, "cy", path), f"{path}.cy"),
        width=_num(_get(data, "width", path), f"{path}.width"),
        height=_num(_get(data, "height", path), f"{path}.height"),
        pose=pose,
    )


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "cameras": [_camera_to_dict(c) for c in rig.cameras],
        "adjacency": [list(pair) for pair in rig.adjacency],
    }


def rig_from_dict(data, path: str = "rig") -> CameraRig:
    cameras = tuple(
        _camera_from_dict(c, f"{path}.cameras[{i}]")
        for i, c in enumerate(_list(_get(data, "cameras", path), f"{path}.cameras"))
    )
    adjacency = []
    for i, pair in enumerate(_list(_get(data, "adjacency", path), f"{path}.adjacency")):
        items = _list(pair, f"{path}.adjacency[{i}]", 2)
        adjacency.append(
            (
                _str(items[0], f"{path}.adjacency[{i}][0]"),
                _str(items[1], f"{path}.adjacency[{i}][1]"),
            )
        )
    try:
        return CameraRig(cameras=cameras, adjacency=tuple(adjacency))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def _box_to_list(box: Box3D) -> list[float]:
    return [box.x, box.y, box.z, box.l, box.w, box.h, box.theta]


def _box_from_list(data, path: str) -> Box3D:
    x, y, z, l, w, h, theta = _floats(data, path, 7)
    try:
        return Box3D(x=x, y=y, z=z, l=l, w=w, h=h, theta=theta)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_scene(path, scene: Scene, lidar_bin: bool = False) -> None:
    """Write a scene file; lidar_bin switches clouds to binary side files."""
    path = Path(path)
    frames = []
    for frame in scene.frames:
        cloud = np.asarray(frame.cloud, dtype=float)
        if lidar_bin:
            bin_name = f"{path.stem}_frame{frame.index:04d}.bin"
            (path.parent / bin_name).write_bytes(
                np.ascontiguousarray(cloud, dtype="<f4").tobytes()
            )
            lidar = {"bin_file": bin_name}
        else:
            lidar = {"inline": [[float(v) for v in row] for row in cloud]}
        frames.append(
            {
                "index": frame.index,
                "objects": [
                    {
                        "uid": obj.uid,
                        "class": obj.class_id,
                        "box": _box_to_list(obj.box),
                    }
                    for obj in frame.objects
                ],
                "lidar": lidar,
            }
        )
    _dump_json(path, {"rig": rig_to_dict(scene.rig), "frames": frames})


def _load_cloud(lidar, scene_dir: Path, path: str) -> np.ndarray:
    if not isinstance(lidar, dict):
        _fail(path, f"expected an object, got {type(lidar).__name__}")
    if ("inline" in lidar) == ("bin_file" in lidar):
        _fail(path, "expected exactly one of 'inline' or 'bin_file'")
    if "inline" in lidar:
        rows = _list(lidar["inline"], f"{path}.inline")
        points = [
            _floats(row, f"{path}.inline[{i}]", 3) for i, row in enumerate(rows)
        ]
        return np.asarray(points, dtype=float).reshape(-1, 3)
    bin_path = scene_dir / _str(lidar["bin_file"], f"{path}.bin_file")
    if not bin_path.is_file():
        _fail(f"{path}.bin_file", f"file not found: {bin_path}")
    blob = bin_path.read_bytes()
    if len(blob) % 12 != 0:
        _fail(f"{path}.bin_file", f"byte length is not a multiple of 12: {bin_path}")
    return np.frombuffer(blob, dtype="<f4").reshape(-1, 3).astype(float)


def load_scene(path) -> Scene:
    path = Path(path)
    data = _load_json(path)
    rig = rig_from_dict(_get(data, "rig", "$"), "rig")
    frames = []
    for i, frame_data in enumerate(_list(_get(data, "frames", "$"), "frames")):
        fpath = f"frames[{i}]"
        objects = []
        for j, obj in enumerate(
            _list(_get(frame_data, "objects", fpath), f"{fpath}.objects")
        ):
            opath = f"{fpath}.objects[{j}]"
            objects.append(
                SceneObject(
                    uid=_int(_get(obj, "uid", opath), f"{opath}.uid"),
                    class_id=_str(_get(obj, "class", opath), f"{opath}.class"),
                    box=_box_from_list(_get(obj, "box", opath), f"{opath}.box"),
                )
            )
        cloud = _load_cloud(
            _get(frame_data, "lidar", fpath), path.parent, f"{fpath}.lidar"
        )
        frames.append(
            Frame(
                index=_int(_get(frame_data, "index", fpath), f"{fpath}.index"),
                objects=tuple(objects),
                cloud=cloud,
            )
        )
    return Scene(rig=rig, frames=tuple(frames))


# -- detections ----------------------------------------------------------------


def detection_records(detections_by_frame: dict) -> list[dict]:
    """Flatten {frame: [Detection2D]} into the detections file payload."""
    records = []
    for frame_index in sorted(detections_by_frame):
        for det in detections_by_frame[frame_index]:
            record = {
                "frame": frame_index,
                "camera_id": det.camera_id,
                "bbox": [det.bbox.x_min, det.bbox.y_min, det.bbox.x_max, det.bbox.y_max],
                "class": det.class_id,
                "score": det.score,
            }
            if det.embedding is not None:
                record["embedding"] = [float(v) for v in det.embedding]
            if det.truth_uid is not None:
                record["truth_uid"] = det.truth_uid
            records.append(record)
    return records


def write_detections(path, detections_by_frame: dict) -> None:
    _dump_json(path, detection_records(detections_by_frame))


def load_detection_records(path) -> list[tuple[int, Detection2D]]:
    """Flat (frame, detection) list preserving file order; match files index
    into this list."""
    data = _load_json(path)
    records = []
    for i, rec in enumerate(_list(data, "$")):
        rpath = f"$[{i}]"
        bbox = _floats(_get(rec, "bbox", rpath), f"{rpath}.bbox", 4)
        embedding = None
        if "embedding" in rec:
            values = _list(rec["embedding"], f"{rpath}.embedding")
            embedding = np.asarray(
                [_num(v, f"{rpath}.embedding[{k}]") for k, v in enumerate(values)],
                dtype=float,
            )
        truth_uid = rec.get("truth_uid")
        if truth_uid is not None:
            truth_uid = _int(truth_uid, f"{rpath}.truth_uid")
        try:
            det = Detection2D(
                camera_id=_str(_get(rec, "camera_id", rpath), f"{rpath}.camera_id"),
                bbox=BBox2D(x_min=bbox[0], y_min=bbox[1], x_max=bbox[2], y_max=bbox[3]),
                class_id=_str(_get(rec, "class", rpath), f"{rpath}.class"),
                score=_num(_get(rec, "score", rpath), f"{rpath}.score"),
                embedding=embedding,
                truth_uid=truth_uid,
            )
        except ValueError as exc:
            raise SchemaError(f"{rpath}: {exc}") from exc
        records.append((_int(_get(rec, "frame", rpath), f"{rpath}.frame"), det))
    return records


def detections_by_frame(records) -> dict:
    out: dict[int, list[Detection2D]] = {}
    for frame_index, det in records:
        out.setdefault(frame_index, []).append(det)
    return out


# -- matches -------------------------------------------------------------------


def write_matches(path, rig: CameraRig, detections_by_frame_map: dict, matches_by_frame: dict) -> None:
    """Match file: rig topology plus matched pairs as global indices into the
    detections file written from the same run."""
    index_of: dict[int, int] = {}
    counter = 0
    for frame_index in sorted(detections_by_frame_map):
        for det in detections_by_frame_map[frame_index]:
            index_of[id(det)] = counter
            counter += 1
    pairs = []
    for frame_index in sorted(matches_by_frame):
        for pair in matches_by_frame[frame_index].pairs:
            pairs.append(
                {
                    "frame": frame_index,
                    "a": index_of[id(pair.a)],
                    "b": index_of[id(pair.b)],
                    "distance": float(pair.distance),
                }
            )
    payload = {
        "cameras": [cam.id for cam in rig.cameras],
        "adjacency": [list(p) for p in rig.adjacency],
        "pairs": pairs,
    }
    _dump_json(path, payload)


def load_matches(path) -> dict:
    data = _load_json(path)
    cameras = [
        _str(c, f"cameras[{i}]")
        for i, c in enumerate(_list(_get(data, "cameras", "$"), "cameras"))
    ]
    adjacency = []
    for i, pair in enumerate(_list(_get(data, "adjacency", "$"), "adjacency")):
        items = _list(pair, f"adjacency[{i}]", 2)
        adjacency.append(
            (_str(items[0], f"adjacency[{i}][0]"), _str(items[1], f"adjacency[{i}][1]"))
        )
    pairs = []
    for i, rec in enumerate(_list(_get(data, "pairs", "$"), "pairs")):
        rpath = f"pairs[{i}]"
        pairs.append(
            {
                "frame": _int(_get(rec, "frame", rpath), f"{rpath}.frame"),
                "a": _int(_get(rec, "a", rpath), f"{rpath}.a"),
                "b": _int(_get(rec, "b", rpath), f"{rpath}.b"),
                "distance": _num(_get(rec, "distance", rpath), f"{rpath}.distance"),
            }
        )
    return {"cameras": cameras, "adjacency": adjacency, "pairs": pairs}


def matches_against_detections(matches_payload: dict, records) -> dict:
    """Rebuild per-frame MatchResults from a match file and the detection
    records it indexes; unmatched lists hold that frame's remaining detections."""
    n = len(records)
    paired_indices: dict[int, list[tuple[int, int, float]]] = {}
    for pair in matches_payload["pairs"]:
        for key in ("a", "b"):
            if not 0 <= pair[key] < n:
                raise SchemaError(
                    f"pairs: detection index {pair[key]} out of range 0..{n - 1}"
                )
        frame = pair["frame"]
        for key in ("a", "b"):
            if records[pair[key]][0] != frame:
                raise SchemaError(
                    f"pairs: detection {pair[key]} belongs to frame "
                    f"{records[pair[key]][0]}, pair says {frame}"
                )
        paired_indices.setdefault(frame, []).append(
            (pair["a"], pair["b"], pair["distance"])
        )
    results: dict[int, MatchResult] = {}
    frames = sorted({frame for frame, _ in records})
    for frame in frames:
        frame_pairs = [
            MatchedPair(a=records[a][1], b=records[b][1], distance=d)
            for a, b, d in paired_indices.get(frame, [])
        ]
        used = {id(p.a) for p in frame_pairs} | {id(p.b) for p in frame_pairs}
        unmatched = [
            det for f, det in records if f == frame and id(det) not in used
        ]
        results[frame] = MatchResult(pairs=frame_pairs, unmatched=unmatched)
    return results


# -- 3D boxes ------------------------------------------------------------------


def write_boxes(path, boxes_by_frame: dict) -> None:
    records = []
    for frame_index in sorted(boxes_by_frame):
        for box in boxes_by_frame[frame_index]:
            records.append(
                {
                    "frame": box.frame,
                    "class": box.class_id,
                    "score": box.score,
                    "box": _box_to_list(box.box),
                    "n_sources": box.n_sources,
                    "merged": box.merged,
                }
            )
    _dump_json(path, records)


def load_boxes(path) -> dict:
    data = _load_json(path)
    out: dict[int, list[PredBox]] = {}
    for i, rec in enumerate(_list(data, "$")):
        rpath = f"$[{i}]"
        merged = _get(rec, "merged", rpath)
        if not isinstance(merged, bool):
            _fail(f"{rpath}.merged", f"expected a boolean, got {type(merged).__name__}")
        box = PredBox(
            frame=_int(_get(rec, "frame", rpath), f"{rpath}.frame"),
            class_id=_str(_get(rec, "class", rpath), f"{rpath}.class"),
            score=_num(_get(rec, "score", rpath), f"{rpath}.score"),
            box=_box_from_list(_get(rec, "box", rpath), f"{rpath}.box"),
            n_sources=_int(_get(rec, "n_sources", rpath), f"{rpath}.n_sources"),
            merged=merged,
        )
        out.setdefault(box.frame, []).append(box)
    return out


# -- configs and reports ---------------------------------------------------------


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from an optional JSON file plus flag overrides.

    Missing keys keep their dataclass defaults. Overrides use dotted paths
    into the config dict, e.g. {"gen.seed": 7, "tau": 0.9}.
    """
    data = {}
    if path is not None:
        loaded = _load_json(path)
        if not isinstance(loaded, dict):
            _fail("$", f"expected an object, got {type(loaded).__name__}")
        data = loaded
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        target = data
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    try:
        return config_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"config: {exc}") from exc


def write_report(path, report) -> None:
    _dump_json(path, report.to_dict())


def write_comparison(path_base, comparison) -> dict:
    """Write compare artifacts (<base>.json/.csv/.txt); returns the paths."""
    base = Path(path_base)
    json_path = base.with_suffix(".json")
    csv_path = base.with_suffix(".csv")
    txt_path = base.with_suffix(".txt")
    json_path.write_text(
        json.dumps(comparison.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    csv_path.write_text(comparison.to_csv(), encoding="utf-8")
    txt_path.write_text(comparison.to_text(), encoding="utf-8")
    return {"json": json_path, "csv": csv_path, "text": txt_path}

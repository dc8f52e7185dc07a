"""Binary little-endian PLY serialization for Gaussian scenes.

Layout follows the common splat convention: per-vertex float32 properties
x, y, z, f_dc_0..2, f_rest_0..44 (channel-major), opacity, scale_0..2,
rot_0..3. Identity data rides along as optional extension properties
feat_0..15 (float32) and obj_id (int32); stock files without them can carry
a `<stem>.identity.npz` sidecar instead. A trained classifier persists as
`<stem>.classifier.npz` (it has no per-vertex layout).
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .scene import (FEATURE_DIM, SH_REST_COEFFS, Classifier, GaussianScene,
                    SceneError)


class PlyError(SceneError):
    """Malformed or unsupported PLY input."""


_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}


def _read_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyError("not a PLY file (missing magic)")
    fmt = None
    count = None
    props = []
    while True:
        line = fh.readline()
        if not line:
            raise PlyError("unexpected end of header")
        line = line.decode("ascii", errors="replace").strip()
        if line == "end_header":
            break
        if not line or line.startswith("comment"):
            continue
        parts = line.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise PlyError(f"unsupported element {parts[1]!r}")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] == "list":
                raise PlyError("list properties are not supported")
            if parts[1] not in _PLY_TYPES:
                raise PlyError(f"unsupported property type {parts[1]!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt != "binary_little_endian":
        raise PlyError(f"format must be binary_little_endian, got {fmt!r}")
    if count is None:
        raise PlyError("missing vertex element")
    return count, props


def _collect(names, data, pattern, expected=None):
    rx = re.compile(pattern)
    found = sorted((int(rx.match(n).group(1)), n) for n in names if rx.match(n))
    if expected is not None and found and len(found) != expected:
        raise PlyError(f"inconsistent property count for {pattern!r}: "
                       f"{len(found)} found, {expected} expected")
    if found and [i for i, _ in found] != list(range(len(found))):
        raise PlyError(f"non-contiguous property indices for {pattern!r}")
    if not found:
        return None
    cols = [data[n].astype(np.float64) for _, n in found]
    return np.stack(cols, axis=1)


def load_scene(path) -> GaussianScene:
    """Load a Gaussian scene from a splat-convention PLY file."""
    path = Path(path)
    with open(path, "rb") as fh:
        count, props = _read_header(fh)
        dtype = np.dtype([(n, t) for n, t in props])
        raw = fh.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise PlyError("truncated vertex data")
    data = np.frombuffer(raw, dtype=dtype, count=count)
    names = set(dtype.names)

    for req in ("x", "y", "z", "opacity"):
        if req not in names:
            raise PlyError(f"missing required property {req!r}")
    positions = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    sh_dc = _collect(names, data, r"^f_dc_(\d+)$", expected=3)
    if sh_dc is None:
        raise PlyError("missing f_dc_* properties")
    rest_flat = _collect(names, data, r"^f_rest_(\d+)$")
    if rest_flat is None:
        sh_rest = np.zeros((count, 3, SH_REST_COEFFS))
    else:
        per_channel, rem = divmod(rest_flat.shape[1], 3)
        if rem or per_channel > SH_REST_COEFFS:
            raise PlyError(f"bad f_rest_* count {rest_flat.shape[1]}")
        sh_rest = np.zeros((count, 3, SH_REST_COEFFS))
        sh_rest[:, :, :per_channel] = rest_flat.reshape(count, 3, per_channel)
    log_scales = _collect(names, data, r"^scale_(\d+)$", expected=3)
    rotations = _collect(names, data, r"^rot_(\d+)$", expected=4)
    if log_scales is None or rotations is None:
        raise PlyError("missing scale_*/rot_* properties")
    opacities = data["opacity"].astype(np.float64)

    features = _collect(names, data, r"^feat_(\d+)$", expected=FEATURE_DIM)
    object_ids = data["obj_id"].astype(np.int32) if "obj_id" in names else None

    if features is None and object_ids is None:
        sidecar = path.with_suffix(".identity.npz")
        if sidecar.exists():
            with np.load(sidecar) as f:
                if "features" in f:
                    features = f["features"].astype(np.float64)
                if "object_ids" in f:
                    object_ids = f["object_ids"].astype(np.int32)
    if features is None:
        features = np.zeros((count, FEATURE_DIM))
    if features.shape != (count, FEATURE_DIM):
        raise PlyError("identity feature length must be 16")

    classifier = None
    cpath = path.with_suffix(".classifier.npz")
    if cpath.exists():
        with np.load(cpath) as f:
            classifier = Classifier(f["weight"].astype(np.float64),
                                    f["bias"].astype(np.float64))

    scene = GaussianScene(
        positions=positions,
        log_scales=log_scales,
        rotations=rotations,
        opacities_raw=opacities,
        sh_dc=sh_dc,
        sh_rest=sh_rest,
        features=features,
        object_ids=object_ids,
        classifier=classifier,
    )
    try:
        scene.validate()
    except SceneError as exc:
        raise PlyError(f"{path.name}: {exc}") from exc
    return scene


def save_scene(scene: GaussianScene, path) -> None:
    """Write a scene as a splat-convention PLY (float32 fields)."""
    path = Path(path)
    n = len(scene)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    fields += [(f"f_dc_{i}", "<f4") for i in range(3)]
    fields += [(f"f_rest_{i}", "<f4") for i in range(3 * SH_REST_COEFFS)]
    fields += [("opacity", "<f4")]
    fields += [(f"scale_{i}", "<f4") for i in range(3)]
    fields += [(f"rot_{i}", "<f4") for i in range(4)]
    fields += [(f"feat_{i}", "<f4") for i in range(FEATURE_DIM)]
    has_ids = scene.object_ids is not None
    if has_ids:
        fields += [("obj_id", "<i4")]
    rec = np.zeros(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = scene.positions.T.astype(np.float32)
    for i in range(3):
        rec[f"f_dc_{i}"] = scene.sh_dc[:, i]
    rest_flat = scene.sh_rest.reshape(n, 3 * SH_REST_COEFFS)
    for i in range(3 * SH_REST_COEFFS):
        rec[f"f_rest_{i}"] = rest_flat[:, i]
    rec["opacity"] = scene.opacities_raw
    for i in range(3):
        rec[f"scale_{i}"] = scene.log_scales[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = scene.rotations[:, i]
    for i in range(FEATURE_DIM):
        rec[f"feat_{i}"] = scene.features[:, i]
    if has_ids:
        rec["obj_id"] = scene.object_ids

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    typemap = {"<f4": "float", "<i4": "int"}
    for name, t in fields:
        header.append(f"property {typemap[t]} {name}")
    header.append("end_header\n")
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(rec.tobytes())

    cpath = path.with_suffix(".classifier.npz")
    if scene.classifier is not None:
        np.savez(cpath, weight=scene.classifier.weight, bias=scene.classifier.bias)
    elif cpath.exists():
        cpath.unlink()

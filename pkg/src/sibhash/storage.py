"""Binary file formats and plain-text loaders.

All multi-byte fields are little-endian. Formats:

* ``SHM1`` matrices: magic, u32 rows, u32 cols, u32 dtype (0 = float32,
  1 = float64), row-major payload.
* ``SHC1`` packed codes: magic, u32 n_items, u32 code_len, u64 words
  row-major.
* ``SHK1`` kernel pipelines, ``SHCC`` CCA models, ``SHW1`` hash models: see
  the writer functions below.
"""

import struct

import numpy as np

from .codes import PackedCodes

MATRIX_MAGIC = b"SHM1"
CODES_MAGIC = b"SHC1"
KERNEL_MAGIC = b"SHK1"
CCA_MAGIC = b"SHCC"
MODEL_MAGIC = b"SHW1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

MODE_TAGS = {
    "embedding": 0,
    "fixed_theta": 1,
    "learned_theta": 2,
    "ksh_binary": 3,
    "lsh": 4,
}
_TAG_MODES = {v: k for k, v in MODE_TAGS.items()}


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated file")
    return buf


def _expect_magic(fh, magic):
    got = fh.read(len(magic))
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")


def _write_f64(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(fh, count):
    return np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").copy()


def write_matrix(path, arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("SHM1 stores 2-D matrices")
    if arr.dtype == np.float32:
        code, dt = 0, "<f4"
    else:
        code, dt = 1, "<f8"
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<III", arr.shape[0], arr.shape[1], code))
        fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        _expect_magic(fh, MATRIX_MAGIC)
        rows, cols, code = struct.unpack("<III", _read_exact(fh, 12))
        if code not in _DTYPE_CODES:
            raise ValueError(f"unknown dtype code {code}")
        dt = _DTYPE_CODES[code]
        data = np.frombuffer(_read_exact(fh, rows * cols * dt.itemsize), dtype=dt)
    return data.reshape(rows, cols).copy()


def write_packed_codes(path, packed):
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<II", packed.n_items, packed.code_len))
        fh.write(np.ascontiguousarray(packed.words, dtype="<u8").tobytes())


def read_packed_codes(path):
    with open(path, "rb") as fh:
        _expect_magic(fh, CODES_MAGIC)
        n_items, code_len = struct.unpack("<II", _read_exact(fh, 8))
        n_words = (code_len + 63) // 64
        raw = np.frombuffer(
            _read_exact(fh, 8 * n_items * n_words), dtype="<u8"
        )
    return PackedCodes(raw.reshape(n_items, n_words).astype(np.uint64), code_len)


def write_kernel_pipeline(path, pipe):
    with open(path, "wb") as fh:
        fh.write(KERNEL_MAGIC)
        p, d_raw = pipe.anchors.shape
        fh.write(struct.pack("<II", p, d_raw))
        fh.write(struct.pack("<d", pipe.bandwidth))
        _write_f64(fh, pipe.anchors)
        _write_f64(fh, pipe.center_mean)


def read_kernel_pipeline(path):
    from .features import KernelPipeline

    with open(path, "rb") as fh:
        _expect_magic(fh, KERNEL_MAGIC)
        p, d_raw = struct.unpack("<II", _read_exact(fh, 8))
        (bandwidth,) = struct.unpack("<d", _read_exact(fh, 8))
        anchors = _read_f64(fh, p * d_raw).reshape(p, d_raw)
        center_mean = _read_f64(fh, p)
    return KernelPipeline(anchors=anchors, bandwidth=bandwidth, center_mean=center_mean)


def write_cca_model(path, model):
    with open(path, "wb") as fh:
        fh.write(CCA_MAGIC)
        d, r = model.proj_x.shape
        e = model.proj_y.shape[0]
        fh.write(struct.pack("<III", d, e, r))
        fh.write(struct.pack("<d", model.eps))
        _write_f64(fh, model.proj_x)
        _write_f64(fh, model.proj_y)
        _write_f64(fh, model.correlations)
        _write_f64(fh, model.mean_x)
        _write_f64(fh, model.mean_y)


def read_cca_model(path):
    from .cca import CcaModel

    with open(path, "rb") as fh:
        _expect_magic(fh, CCA_MAGIC)
        d, e, r = struct.unpack("<III", _read_exact(fh, 12))
        (eps,) = struct.unpack("<d", _read_exact(fh, 8))
        proj_x = _read_f64(fh, d * r).reshape(d, r)
        proj_y = _read_f64(fh, e * r).reshape(e, r)
        correlations = _read_f64(fh, r)
        mean_x = _read_f64(fh, d)
        mean_y = _read_f64(fh, e)
    return CcaModel(
        proj_x=proj_x,
        proj_y=proj_y,
        correlations=correlations,
        eps=eps,
        mean_x=mean_x,
        mean_y=mean_y,
    )


def _write_str(fh, s):
    data = s.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_str(fh):
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def write_hash_model(path, model):
    if model.mode not in MODE_TAGS:
        raise ValueError(f"unknown mode {model.mode!r}")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        c, d = model.projection.shape
        fh.write(struct.pack("<III", c, d, MODE_TAGS[model.mode]))
        fh.write(struct.pack("<dd", model.lam, model.theta0))
        traj = np.asarray(model.theta_trajectory, dtype=np.float64)
        fh.write(struct.pack("<I", traj.size))
        _write_f64(fh, traj)
        _write_f64(fh, model.projection)
        mean = model.center_mean
        if mean is None:
            fh.write(struct.pack("<I", 0))
        else:
            fh.write(struct.pack("<I", mean.size))
            _write_f64(fh, mean)
        _write_str(fh, model.kernel_id or "")
        _write_str(fh, model.cca_id or "")


def read_hash_model(path):
    from .trainer import HashModel

    with open(path, "rb") as fh:
        _expect_magic(fh, MODEL_MAGIC)
        c, d, tag = struct.unpack("<III", _read_exact(fh, 12))
        if tag not in _TAG_MODES:
            raise ValueError(f"unknown mode tag {tag}")
        lam, theta0 = struct.unpack("<dd", _read_exact(fh, 16))
        (n_theta,) = struct.unpack("<I", _read_exact(fh, 4))
        traj = _read_f64(fh, n_theta)
        projection = _read_f64(fh, c * d).reshape(c, d)
        (mean_len,) = struct.unpack("<I", _read_exact(fh, 4))
        mean = _read_f64(fh, mean_len) if mean_len else None
        kernel_id = _read_str(fh)
        cca_id = _read_str(fh)
    return HashModel(
        projection=projection,
        mode=_TAG_MODES[tag],
        lam=lam,
        theta0=theta0,
        theta_trajectory=traj,
        center_mean=mean,
        kernel_id=kernel_id or None,
        cca_id=cca_id or None,
    )


def write_labels(path, labels):
    with open(path, "w") as fh:
        for lab in np.asarray(labels).ravel():
            fh.write(f"{int(lab)}\n")


def read_labels(path):
    with open(path) as fh:
        labels = [int(line) for line in fh if line.strip()]
    return np.asarray(labels, dtype=np.int64)


def read_embedding_text(path):
    """Delimited text embeddings, one class per row."""
    arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return arr


def read_hierarchy(path):
    """Two-column ``child_id parent_id`` file; roots carry parent -1.

    Returns a parent-pointer array indexed by node id.
    """
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            child, parent = line.split()
            pairs.append((int(child), int(parent)))
    if not pairs:
        raise ValueError(f"no hierarchy edges in {path}")
    n_nodes = max(c for c, _ in pairs) + 1
    parents = np.full(n_nodes, -2, dtype=np.int64)
    for child, parent in pairs:
        if child < 0:
            raise ValueError("node ids must be non-negative")
        parents[child] = parent
    if (parents == -2).any():
        missing = int(np.nonzero(parents == -2)[0][0])
        raise ValueError(f"node {missing} has no parent entry")
    return parents

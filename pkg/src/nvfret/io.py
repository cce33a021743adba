"""File formats: histogram CSV, FLIM cube (sidecar + raw payload), map CSV."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from nvfret.errors import DataFormatError
from nvfret.flim import CLASS_NAMES, LOW_SIGNAL, LifetimeMap
from nvfret.fitting import GateSpec
from nvfret.grid import FlimCube, IrfSpec, TcspcHistogram, TimeGrid

HISTOGRAM_HEADER = "time_ps,counts"
MAP_COLUMNS = ("row", "col", "class", "tau_slow_ns", "tau_slow_sigma", "tau_fast_ns",
               "tau_fast_sigma", "counts", "goodness", "amp_slow", "amp_fast")
CUBE_KEYS = ("width_px", "height_px", "n_bins", "bin_width_ps", "origin_ps", "pixel_size_nm",
             "endianness")
_CLASS_CODES = {name: code for code, name in CLASS_NAMES.items()}


def _num(value: float) -> str:
    """Shortest round-tripping text for a float; integral values print bare."""
    value = float(value)
    if value == int(value) and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def write_histogram_csv(h: TcspcHistogram, path) -> None:
    starts = h.grid.starts_ps()
    if np.any(starts != np.round(starts)):
        raise DataFormatError("histogram CSV needs integer bin starts in ps")
    with open(path, "w", newline="\n") as fh:
        fh.write(HISTOGRAM_HEADER + "\n")
        for t, c in zip(starts.astype(np.int64), h.counts):
            fh.write(f"{t},{int(c)}\n")


def read_histogram_csv(path, origin_ps: float | None = None) -> TcspcHistogram:
    """Read a histogram; the bin width is inferred from the time column.

    The file records detector-axis bin starts only, so the excitation origin
    comes from the caller (default: the ``TimeGrid`` default).
    """
    try:
        fh = open(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read histogram {path}: {exc.strerror}") from None
    with fh:
        header = fh.readline().strip()
        if header != HISTOGRAM_HEADER:
            raise DataFormatError(f"{path}: expected header {HISTOGRAM_HEADER!r}, got {header!r}")
        times, counts = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            try:
                if len(parts) != 2:
                    raise ValueError
                t, c = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed row {line.strip()!r}") from None
            if c < 0:
                raise DataFormatError(f"{path}:{lineno}: negative count")
            times.append(t)
            counts.append(c)
    if len(times) < 2:
        raise DataFormatError(f"{path}: need at least two bins")
    steps = np.diff(times)
    if steps[0] <= 0 or np.any(steps != steps[0]) or times[0] != 0:
        raise DataFormatError(f"{path}: time_ps must be uniform bin starts beginning at 0")
    width = float(steps[0])
    origin = TimeGrid().origin_ps if origin_ps is None else origin_ps
    return TcspcHistogram(TimeGrid(width, len(times), origin), np.array(counts, dtype=np.int64))


def _meta_path(path) -> Path:
    return Path(str(path) + ".meta")


def write_cube(cube: FlimCube, path) -> None:
    """Raw uint32 little-endian payload at ``path``, metadata at ``path.meta``."""
    meta = {
        "width_px": cube.width_px,
        "height_px": cube.height_px,
        "n_bins": cube.grid.n_bins,
        "bin_width_ps": _num(cube.grid.bin_width_ps),
        "origin_ps": _num(cube.grid.origin_ps),
        "pixel_size_nm": _num(cube.pixel_size_nm),
        "endianness": "little",
    }
    for k, v in sorted(cube.metadata.items()):
        meta.setdefault(k, _num(v) if isinstance(v, (int, float)) else v)
    _write_meta(path, meta)
    # rows, then columns, then bins: bin index varies fastest
    np.ascontiguousarray(cube.counts, dtype="<u4").tofile(path)


def read_cube(path) -> FlimCube:
    path = Path(path)
    if path.suffix == ".meta":
        path = path.with_suffix("")
    try:
        meta = _read_meta(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read cube metadata {_meta_path(path)}: {exc.strerror}") from None
    missing = [k for k in CUBE_KEYS if k not in meta]
    if missing:
        raise DataFormatError(f"{_meta_path(path)}: missing key {missing[0]}")
    if meta["endianness"] != "little":
        raise DataFormatError(f"unsupported endianness {meta['endianness']!r}")
    try:
        width, height, n_bins = (int(meta[k]) for k in ("width_px", "height_px", "n_bins"))
        bin_width, origin, pixel = (float(meta[k]) for k in ("bin_width_ps", "origin_ps",
                                                            "pixel_size_nm"))
    except ValueError as exc:
        raise DataFormatError(f"{_meta_path(path)}: {exc}") from None
    try:
        payload = np.fromfile(path, dtype="<u4")
    except OSError as exc:
        raise DataFormatError(f"cannot read cube payload {path}: {exc.strerror}") from None
    extra = {k: v for k, v in meta.items() if k not in CUBE_KEYS}
    try:
        grid = TimeGrid(bin_width, n_bins, origin)
    except Exception as exc:
        raise DataFormatError(f"{_meta_path(path)}: {exc}") from None
    return FlimCube(width, height, grid, payload, pixel, extra)


def _write_meta(path, meta: dict) -> None:
    with open(_meta_path(path), "w", newline="\n") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def _read_meta(path) -> dict:
    meta = {}
    for line in _meta_path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{_meta_path(path)}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    return meta


def write_map_csv(m: LifetimeMap, path) -> None:
    """One row per pixel; absent values are empty fields.

    The pixel size and fit context (grid, IRF, gate) go to ``path.meta``.
    """
    meta = {"pixel_size_nm": _num(m.pixel_size_nm)}
    if m.grid is not None:
        meta.update(bin_width_ps=_num(m.grid.bin_width_ps), n_bins=m.grid.n_bins,
                    origin_ps=_num(m.grid.origin_ps))
    if m.irf is not None:
        meta.update(irf_fwhm_ps=_num(m.irf.fwhm_ps), irf_center_ps=_num(m.irf.center_ps))
    if m.gate is not None:
        meta.update(gate_head_cut_ns=_num(m.gate.head_cut_ns),
                    gate_tail_threshold_fraction=_num(m.gate.tail_threshold_fraction))
    _write_meta(path, meta)

    def cell(v):
        return "" if not np.isfinite(v) else repr(float(v))

    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(MAP_COLUMNS) + "\n")
        h, w = m.shape
        for r in range(h):
            for c in range(w):
                fields = [
                    str(r), str(c), CLASS_NAMES[int(m.cls[r, c])],
                    cell(m.tau_slow[r, c]), cell(m.tau_slow_sigma[r, c]),
                    cell(m.tau_fast[r, c]), cell(m.tau_fast_sigma[r, c]),
                    str(int(m.counts[r, c])), cell(m.goodness[r, c]),
                    cell(m.amp_slow[r, c]), cell(m.amp_fast[r, c]),
                ]
                fh.write(",".join(fields) + "\n")


def _map_context(path):
    """Pixel size and fit context from the map sidecar, if present."""
    try:
        meta = _read_meta(path)
    except OSError:
        return 100.0, None, None, None
    try:
        pixel = float(meta.get("pixel_size_nm", 100.0))
        grid = irf = gate = None
        if "n_bins" in meta:
            grid = TimeGrid(float(meta["bin_width_ps"]), int(meta["n_bins"]),
                            float(meta["origin_ps"]))
        if "irf_fwhm_ps" in meta:
            irf = IrfSpec(float(meta["irf_fwhm_ps"]), float(meta["irf_center_ps"]))
        if "gate_head_cut_ns" in meta:
            gate = GateSpec(float(meta["gate_head_cut_ns"]),
                            float(meta["gate_tail_threshold_fraction"]))
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{_meta_path(path)}: {exc}") from None
    return pixel, grid, irf, gate


def read_map_csv(path) -> LifetimeMap:
    """Inverse of :func:`write_map_csv`. The amplitude columns and the
    sidecar are optional."""
    pixel_size_nm, grid, irf, gate = _map_context(path)
    try:
        fh = open(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read map {path}: {exc.strerror}") from None
    with fh:
        header = fh.readline().strip().split(",")
        required = MAP_COLUMNS[:9]
        if tuple(header[:9]) != required or not set(header[9:]) <= set(MAP_COLUMNS[9:]):
            raise DataFormatError(f"{path}: unexpected header {','.join(header)!r}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not rows:
        raise DataFormatError(f"{path}: no pixels")
    try:
        rr = np.array([int(r[0]) for r in rows])
        cc = np.array([int(r[1]) for r in rows])
    except ValueError:
        raise DataFormatError(f"{path}: row/col must be integers") from None
    h, w = int(rr.max()) + 1, int(cc.max()) + 1
    if len(rows) != h * w or rr.min() < 0 or cc.min() < 0:
        raise DataFormatError(f"{path}: expected a full {h}x{w} pixel grid")
    cls = np.full((h, w), LOW_SIGNAL, dtype=np.int8)
    arrays = {name: np.full((h, w), np.nan) for name in header[3:] if name != "counts"}
    counts = np.zeros((h, w), dtype=np.int64)
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields")
        r, c = int(row[0]), int(row[1])
        if row[2] not in _CLASS_CODES:
            raise DataFormatError(f"{path}:{lineno}: unknown class {row[2]!r}")
        cls[r, c] = _CLASS_CODES[row[2]]
        for name, text in zip(header[3:], row[3:]):
            try:
                if name == "counts":
                    counts[r, c] = int(text)
                elif text:
                    arrays[name][r, c] = float(text)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad {name} value {text!r}") from None
    nan = np.full((h, w), np.nan)
    return LifetimeMap(
        cls=cls,
        tau_slow=arrays["tau_slow_ns"],
        tau_slow_sigma=arrays["tau_slow_sigma"],
        tau_fast=arrays["tau_fast_ns"],
        tau_fast_sigma=arrays["tau_fast_sigma"],
        amp_slow=arrays.get("amp_slow", nan),
        amp_fast=arrays.get("amp_fast", nan.copy()),
        counts=counts,
        goodness=arrays["goodness"],
        pixel_size_nm=pixel_size_nm,
        grid=grid,
        irf=irf,
        gate=gate,
    )

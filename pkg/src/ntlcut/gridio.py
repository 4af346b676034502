"""Raster file formats: a plain binary grid and single-band GeoTIFF.

Binary grid layout (all little-endian)::

    u32 width | u32 height | f64 pixel_size | f64 lon0 | f64 lat0 | u8 dtype
    followed by width*height samples, row-major

dtype codes: 0 = float32, 1 = uint8.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import RasterFormatError
from .raster import Raster

_HEADER = struct.Struct("<IIdddB")
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_OF = {np.dtype("float32"): 0, np.dtype("uint8"): 1}

# GeoTIFF tags
_MODEL_PIXEL_SCALE = 33550
_MODEL_TIEPOINT = 33922
_GEO_KEY_DIRECTORY = 34735
_GDAL_NODATA = 42113


def grid_bytes(r: Raster) -> bytes:
    code = _CODE_OF[r.values.dtype]
    header = _HEADER.pack(r.width, r.height, r.pixel_size, r.origin[0], r.origin[1], code)
    return header + np.ascontiguousarray(r.values, dtype=_DTYPE_CODES[code]).tobytes()


def write_grid(path, r: Raster) -> None:
    Path(path).write_bytes(grid_bytes(r))


def read_grid(path) -> Raster:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    w, h, ps, lon0, lat0, code = _HEADER.unpack_from(buf)
    if code not in _DTYPE_CODES:
        raise RasterFormatError(f"{path}: unknown dtype code {code}")
    dt = _DTYPE_CODES[code]
    expected = _HEADER.size + w * h * dt.itemsize
    if len(buf) != expected:
        raise RasterFormatError(f"{path}: expected {expected} bytes, found {len(buf)}")
    values = np.frombuffer(buf, dtype=dt, offset=_HEADER.size).reshape(h, w)
    return Raster(values.astype(dt.newbyteorder("=")), ps, (lon0, lat0))


def write_geotiff(path, r: Raster, tile: int | None = None) -> None:
    """Write an uncompressed single-band GeoTIFF in geographic (EPSG:4326) coordinates.

    ``tile`` selects a tiled layout with square tiles (multiple of 16);
    otherwise the file uses strips.
    """
    import tifffile

    geokeys = (
        1, 1, 0, 3,
        1024, 0, 1, 2,      # GTModelTypeGeoKey = geographic
        1025, 0, 1, 1,      # GTRasterTypeGeoKey = PixelIsArea
        2048, 0, 1, 4326,   # GeographicTypeGeoKey = WGS 84
    )
    extratags = [
        (_MODEL_PIXEL_SCALE, "d", 3, (r.pixel_size, r.pixel_size, 0.0), True),
        (_MODEL_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, r.origin[0], r.origin[1], 0.0), True),
        (_GEO_KEY_DIRECTORY, "H", len(geokeys), geokeys, True),
    ]
    if r.nodata is not None:
        extratags.append((_GDAL_NODATA, "s", 0, repr(float(r.nodata)), True))
    kwargs = {"tile": (tile, tile)} if tile else {"rowsperstrip": 16}
    tifffile.imwrite(
        path, r.values, photometric="minisblack", compression=None,
        extratags=extratags, metadata=None, **kwargs,
    )


def read_geotiff(path) -> Raster:
    import tifffile

    with tifffile.TiffFile(path) as tf:
        page = tf.pages[0]
        values = page.asarray()
        tags = page.tags
        if values.ndim != 2:
            raise RasterFormatError(f"{path}: expected a single band, got shape {values.shape}")
        if values.dtype not in (np.float32, np.uint8):
            raise RasterFormatError(f"{path}: unsupported sample type {values.dtype}")
        if _MODEL_PIXEL_SCALE not in tags or _MODEL_TIEPOINT not in tags:
            raise RasterFormatError(f"{path}: missing ModelPixelScale/ModelTiepoint tags")
        sx, sy = tags[_MODEL_PIXEL_SCALE].value[:2]
        tp = tags[_MODEL_TIEPOINT].value
        if abs(sx - sy) > 1e-12 * max(sx, sy):
            raise RasterFormatError(f"{path}: non-square pixels ({sx}, {sy})")
        i, j = tp[0], tp[1]
        lon0 = tp[3] - i * sx
        lat0 = tp[4] + j * sy
        nodata = None
        if _GDAL_NODATA in tags:
            nodata = float(str(tags[_GDAL_NODATA].value).strip("\x00 "))
    return Raster(np.array(values), float(sx), (lon0, lat0), nodata)


def read_raster(path) -> Raster:
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        return read_geotiff(path)
    return read_grid(path)


def write_raster(path, r: Raster) -> None:
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        write_geotiff(path, r)
    else:
        write_grid(path, r)

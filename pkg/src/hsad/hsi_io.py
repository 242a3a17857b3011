"""Hyperspectral raster and mask IO, cube flattening, synthetic scenes.

Rasters use the ENVI convention of a small text header next to a raw
binary file. Internal storage is always band-sequential (BSQ) float64;
interleave conversion happens at load time. Masks travel as 0/1 CSV or
binary PGM (P5, values 0/255); score maps export as CSV and as PGM with
scores scaled to 0..255.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Malformed or inconsistent raster, header, or mask input."""


# ENVI 'data type' codes supported here (little-endian only):
#   1 = 8-bit unsigned, 4 = 32-bit float, 5 = 64-bit float, 12 = 16-bit unsigned
ENVI_DTYPES = {1: np.uint8, 4: np.float32, 5: np.float64, 12: np.uint16}
_INTERLEAVES = ("bsq", "bil", "bip")


@dataclass(frozen=True)
class HsiCube:
    """A bands x rows x cols raster, stored BSQ as float64.

    ``wavelengths`` is an optional per-band nm list (strictly increasing).
    """

    data: np.ndarray
    wavelengths: tuple | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise DataFormatError(f"cube data must be 3-d (bands, rows, cols), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataFormatError("cube contains non-finite values")
        object.__setattr__(self, "data", data)
        if self.wavelengths is not None:
            wl = tuple(float(w) for w in self.wavelengths)
            if len(wl) != data.shape[0]:
                raise DataFormatError(
                    f"wavelength count {len(wl)} does not match band count {data.shape[0]}"
                )
            if any(b <= a for a, b in zip(wl, wl[1:])):
                raise DataFormatError("wavelengths must be strictly increasing")
            object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DataMatrix:
    """Flattened observation matrix, bands x pixels.

    Column ``row * cols + col`` holds the spectrum of pixel (row, col);
    ``rows``/``cols`` record the source raster shape so the mapping is
    invertible.
    """

    values: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataFormatError(f"matrix must be 2-d, got shape {values.shape}")
        if values.shape[1] != self.rows * self.cols:
            raise DataFormatError(
                f"pixel count {values.shape[1]} does not equal rows*cols = {self.rows * self.cols}"
            )
        object.__setattr__(self, "values", values)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.values.shape[1]

    def pixel_index(self, row: int, col: int) -> int:
        return row * self.cols + col


@dataclass(frozen=True)
class GroundTruthMask:
    """Binary per-pixel labels (1 = anomaly) matching a raster's shape."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DataFormatError(f"mask must be 2-d, got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise DataFormatError("mask labels must be 0 or 1")
        object.__setattr__(self, "labels", labels.astype(np.uint8))

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Parameters of a planted low-rank-plus-sparse test scene."""

    bands: int = 30
    rows: int = 40
    cols: int = 40
    background_rank: int = 3
    n_anomalies: int = 5
    anomaly_fraction: float = 5 / 1600
    noise_sigma: float = 0.01
    seed: int = 7

    def __post_init__(self):
        if self.bands < 1 or self.rows < 1 or self.cols < 1:
            raise ValueError("bands, rows, cols must be positive")
        if not 0 < self.background_rank < self.bands:
            raise ValueError(
                f"background_rank must lie in (0, bands={self.bands}), got {self.background_rank}"
            )
        if not 0 < self.anomaly_fraction < 1:
            raise ValueError(f"anomaly_fraction must lie in (0, 1), got {self.anomaly_fraction}")
        if self.n_anomalies < 0:
            raise ValueError(f"n_anomalies must be nonnegative, got {self.n_anomalies}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        total = self.anomaly_fraction * self.rows * self.cols
        if self.n_anomalies > 0 and total < self.n_anomalies:
            raise ValueError(
                f"anomaly_fraction*pixels = {total:.2f} cannot host {self.n_anomalies} clusters"
            )


# ---------------------------------------------------------------------------
# ENVI raster IO


def _parse_header_text(text: str) -> dict:
    fields = {}
    # values may span lines inside { }
    text = re.sub(r"\{[^}]*\}", lambda m: m.group(0).replace("\n", " "), text)
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        fields[key.strip().lower()] = value.strip()
    return fields


def _header_int(fields: dict, key: str) -> int:
    if key not in fields:
        raise DataFormatError(f"ENVI header is missing required field '{key}'")
    try:
        value = int(fields[key])
    except ValueError as exc:
        raise DataFormatError(f"ENVI header field '{key}' is not an integer: {fields[key]!r}") from exc
    if value <= 0 and key != "header offset" and key != "byte order":
        raise DataFormatError(f"ENVI header field '{key}' must be positive, got {value}")
    return value


def read_envi_header(header_path) -> dict:
    """Parse an ENVI text header into a normalized dict."""
    text = Path(header_path).read_text()
    fields = _parse_header_text(text)
    header = {
        "samples": _header_int(fields, "samples"),
        "lines": _header_int(fields, "lines"),
        "bands": _header_int(fields, "bands"),
        "data type": _header_int(fields, "data type"),
        "header offset": _header_int(fields, "header offset") if "header offset" in fields else 0,
        "byte order": _header_int(fields, "byte order") if "byte order" in fields else 0,
    }
    if "interleave" not in fields:
        raise DataFormatError("ENVI header is missing required field 'interleave'")
    interleave = fields["interleave"].lower()
    if interleave not in _INTERLEAVES:
        raise DataFormatError(f"unsupported value for 'interleave': {fields['interleave']!r}")
    header["interleave"] = interleave
    if header["data type"] not in ENVI_DTYPES:
        raise DataFormatError(
            f"unsupported 'data type' code {header['data type']} (supported: {sorted(ENVI_DTYPES)})"
        )
    if header["byte order"] != 0:
        raise DataFormatError("unsupported 'byte order' (only little-endian, code 0)")
    if header["header offset"] < 0:
        raise DataFormatError(f"'header offset' must be nonnegative, got {header['header offset']}")
    if "wavelength" in fields:
        inner = fields["wavelength"].strip()
        if inner.startswith("{") and inner.endswith("}"):
            inner = inner[1:-1]
        try:
            header["wavelength"] = [float(tok) for tok in inner.split(",") if tok.strip()]
        except ValueError as exc:
            raise DataFormatError(f"malformed 'wavelength' list: {fields['wavelength']!r}") from exc
    return header


def load_envi(header_path, raw_path=None) -> HsiCube:
    """Load an ENVI header/raw pair into a BSQ float64 cube.

    ``raw_path`` defaults to the header path with its suffix dropped
    (``scene.hdr`` -> ``scene.raw`` if present, else ``scene``).
    """
    header_path = Path(header_path)
    if raw_path is None:
        raw_path = header_path.with_suffix(".raw")
        if not raw_path.exists():
            raw_path = header_path.with_suffix("")
    raw_path = Path(raw_path)
    header = read_envi_header(header_path)
    cols, rows, bands = header["samples"], header["lines"], header["bands"]
    dtype = np.dtype(ENVI_DTYPES[header["data type"]]).newbyteorder("<")
    offset = header["header offset"]
    expected = rows * cols * bands * dtype.itemsize
    actual = raw_path.stat().st_size - offset
    if actual != expected:
        raise DataFormatError(
            f"raw file size mismatch: header (samples x lines x bands x itemsize) implies "
            f"{expected} bytes, file holds {actual}"
        )
    flat = np.fromfile(raw_path, dtype=dtype, offset=offset)
    interleave = header["interleave"]
    if interleave == "bsq":
        data = flat.reshape(bands, rows, cols)
    elif interleave == "bil":
        data = flat.reshape(rows, bands, cols).transpose(1, 0, 2)
    else:  # bip
        data = flat.reshape(rows, cols, bands).transpose(2, 0, 1)
    data = np.ascontiguousarray(data, dtype=float)
    if not np.all(np.isfinite(data)):
        raise DataFormatError("raster contains non-finite values")
    return HsiCube(data=data, wavelengths=header.get("wavelength"))


def save_envi(cube: HsiCube, header_path, raw_path=None, interleave: str = "bsq") -> None:
    """Write a cube as a float64 ENVI header/raw pair in the given interleave."""
    interleave = interleave.lower()
    if interleave not in _INTERLEAVES:
        raise DataFormatError(f"unsupported interleave {interleave!r}")
    header_path = Path(header_path)
    raw_path = Path(raw_path) if raw_path is not None else header_path.with_suffix(".raw")
    if interleave == "bsq":
        out = cube.data
    elif interleave == "bil":
        out = cube.data.transpose(1, 0, 2)
    else:
        out = cube.data.transpose(1, 2, 0)
    lines = [
        "ENVI",
        f"samples = {cube.cols}",
        f"lines = {cube.rows}",
        f"bands = {cube.bands}",
        "header offset = 0",
        "file type = ENVI Standard",
        "data type = 5",
        f"interleave = {interleave}",
        "byte order = 0",
    ]
    if cube.wavelengths is not None:
        lines.append("wavelength = {" + ", ".join(repr(w) for w in cube.wavelengths) + "}")
    header_path.write_text("\n".join(lines) + "\n")
    np.ascontiguousarray(out, dtype="<f8").tofile(raw_path)


# ---------------------------------------------------------------------------
# Cube <-> matrix


def cube_to_matrix(cube: HsiCube) -> DataMatrix:
    """Flatten a cube to bands x pixels with row-major pixel order."""
    values = cube.data.reshape(cube.bands, cube.rows * cube.cols)
    return DataMatrix(values=values.copy(), rows=cube.rows, cols=cube.cols)


def matrix_to_cube(matrix: DataMatrix, wavelengths=None) -> HsiCube:
    """Inverse of :func:`cube_to_matrix`; round-trips bit-identically."""
    data = matrix.values.reshape(matrix.bands, matrix.rows, matrix.cols)
    return HsiCube(data=data.copy(), wavelengths=wavelengths)


# ---------------------------------------------------------------------------
# Masks


def load_mask(path, rows: int, cols: int) -> GroundTruthMask:
    """Load a mask from 0/1 CSV or binary PGM; any nonzero becomes 1."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        labels = _read_pgm(path)
        bad = ~np.isin(labels, (0, 255))
        if bad.any():
            raise DataFormatError(
                f"PGM mask holds {int(bad.sum())} values outside {{0, 255}}"
            )
        labels = (labels > 0).astype(np.uint8)
    else:
        rows_out = []
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                rows_out.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"malformed CSV mask row: {line!r}") from exc
        widths = {len(r) for r in rows_out}
        if len(widths) != 1:
            raise DataFormatError(f"ragged CSV mask (row widths {sorted(widths)})")
        labels = (np.asarray(rows_out) != 0).astype(np.uint8)
    if labels.shape != (rows, cols):
        raise DataFormatError(
            f"mask shape {labels.shape} does not match expected ({rows}, {cols})"
        )
    return GroundTruthMask(labels=labels)


def save_mask(mask: GroundTruthMask, path) -> None:
    """Write a mask as binary PGM (0/255) or CSV depending on the extension."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, mask.labels.astype(np.uint8) * 255)
    else:
        _write_csv_grid(path, mask.labels)


def _read_pgm(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataFormatError("truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise DataFormatError(f"not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataFormatError(f"only 8-bit PGM supported (maxval {maxval})")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise DataFormatError("PGM pixel data shorter than width*height")
    return pixels.reshape(height, width).copy()


def _write_pgm(path: Path, grid: np.ndarray) -> None:
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode()
    path.write_bytes(header + np.ascontiguousarray(grid, dtype=np.uint8).tobytes())


def _write_csv_grid(path: Path, grid: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in grid:
            fh.write(",".join(repr(v) for v in row.tolist()) + "\n")


# ---------------------------------------------------------------------------
# Score maps (plain 2-d arrays; the evaluation module owns the score type)


def save_scores_csv(scores: np.ndarray, path) -> None:
    """Write a rows x cols score grid as CSV, full float precision."""
    _write_csv_grid(Path(path), np.asarray(scores, dtype=float))


def load_scores_csv(path) -> np.ndarray:
    """Read a score grid written by :func:`save_scores_csv`."""
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rows.append([float(tok) for tok in line.split(",")])
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"ragged score CSV (row widths {sorted(widths)})")
    return np.asarray(rows, dtype=float)


def save_scores_pgm(scores: np.ndarray, path) -> None:
    """Write scores in [0, 1] as an 8-bit PGM (scaled to 0..255, rounded)."""
    scores = np.asarray(scores, dtype=float)
    if scores.min() < 0 or scores.max() > 1:
        raise ValueError("scores must lie in [0, 1] for PGM export")
    grid = np.rint(scores * 255).astype(np.uint8)
    _write_pgm(Path(path), grid)


# ---------------------------------------------------------------------------
# Synthetic scenes


def _smooth_profiles(rng: np.random.Generator, bands: int, rank: int) -> np.ndarray:
    """Nonnegative smooth spectral profiles, one per column (bands x rank).

    Each profile is a sum of a few Gaussian bumps over the band axis plus a
    small positive floor, so profiles are strictly positive and generically
    linearly independent.
    """
    axis = np.linspace(0.0, 1.0, bands)
    profiles = np.empty((bands, rank))
    for j in range(rank):
        n_bumps = int(rng.integers(2, 5))
        centers = rng.uniform(0.0, 1.0, size=n_bumps)
        widths = rng.uniform(0.08, 0.35, size=n_bumps)
        amps = rng.uniform(0.5, 1.5, size=n_bumps)
        prof = np.zeros(bands)
        for c, w, a in zip(centers, widths, amps):
            prof += a * np.exp(-0.5 * ((axis - c) / w) ** 2)
        profiles[:, j] = prof + 0.05
    return profiles


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> tuple[HsiCube, GroundTruthMask]:
    """Plant a rank-r background with clustered off-subspace anomalies.

    Background columns are nonnegative mixtures of ``background_rank``
    smooth profiles. Each of ``n_anomalies`` pixel clusters receives an
    additive spectrum orthogonal to the background subspace, with amplitude
    tied to the median background column norm, so detectability is
    controlled by construction. Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    n_pixels = spec.rows * spec.cols
    total_anomalous = 0
    if spec.n_anomalies > 0:
        total_anomalous = max(spec.n_anomalies, round(spec.anomaly_fraction * n_pixels))
        if total_anomalous > n_pixels:
            raise ValueError(
                f"infeasible spec: {total_anomalous} anomalous pixels exceed {n_pixels} total"
            )

    profiles = _smooth_profiles(rng, spec.bands, spec.background_rank)
    weights = rng.uniform(0.2, 1.0, size=(spec.background_rank, n_pixels))
    background = profiles @ weights

    labels = np.zeros(n_pixels, dtype=np.uint8)
    data = background.copy()
    if spec.n_anomalies > 0:
        clusters = _carve_clusters(rng, spec.rows, spec.cols, spec.n_anomalies, total_anomalous)
        basis, _ = np.linalg.qr(profiles)
        amplitude = 0.25 * float(np.median(np.linalg.norm(background, axis=0)))
        for members in clusters:
            direction = rng.standard_normal(spec.bands)
            direction -= basis @ (basis.T @ direction)
            norm = np.linalg.norm(direction)
            if norm == 0:  # measure-zero; retry deterministically
                direction = rng.standard_normal(spec.bands)
                direction -= basis @ (basis.T @ direction)
                norm = np.linalg.norm(direction)
            direction /= norm
            for idx in members:
                data[:, idx] += amplitude * direction
                labels[idx] = 1
    if spec.noise_sigma > 0:
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)

    cube = HsiCube(data=data.reshape(spec.bands, spec.rows, spec.cols))
    mask = GroundTruthMask(labels=labels.reshape(spec.rows, spec.cols))
    return cube, mask


def _carve_clusters(rng, rows, cols, n_clusters, total) -> list[list[int]]:
    """Disjoint compact pixel clusters with sizes as equal as possible."""
    sizes = [total // n_clusters] * n_clusters
    for i in range(total % n_clusters):
        sizes[i] += 1
    taken = np.zeros(rows * cols, dtype=bool)
    clusters = []
    seeds = rng.choice(rows * cols, size=n_clusters, replace=False)
    for seed_idx, size in zip(seeds, sizes):
        members = []
        frontier = [int(seed_idx)]
        visited = set()
        while frontier and len(members) < size:
            idx = frontier.pop(0)
            if idx in visited:
                continue
            visited.add(idx)
            if not taken[idx]:
                taken[idx] = True
                members.append(idx)
            r, c = divmod(idx, cols)
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols:
                    frontier.append(nr * cols + nc)
        if len(members) < size:  # dense masks: fall back to any free pixel
            free = np.flatnonzero(~taken)
            extra = free[: size - len(members)]
            taken[extra] = True
            members.extend(int(i) for i in extra)
        clusters.append(members)
    return clusters

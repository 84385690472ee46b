"""
SCT Container IO
Binary named-tensor container plus the dataset and checkpoint layouts built on it

Layout (all integers little-endian):
    magic "SCT1" | u32 record count | records...
    record: u32 name length | UTF-8 name | u8 dtype code | u32 rank |
            u64 extent × rank | raw row-major data
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import (
    CtmConfig,
    TrainConfig,
    build_configs,
    dump_key_values,
    load_key_values,
)
from src.errors import ContractError, DimensionError, SctParseError
from src.forward_model import MASK_KINDS, MaskSet, Measurement, Sample, VideoCube

logger = logging.getLogger(__name__)

MAGIC = b"SCT1"
DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("u1")}
CODE_FOR_DTYPE = {np.dtype(np.float64): 1, np.dtype(np.float32): 2, np.dtype(np.uint8): 3}
SAMPLE_FIELDS = ("cube", "masks", "measurement", "noise_sigma", "mask_seed")
OPTIONAL_FIELDS = ("mask_kind",)  # absent in older datasets: bernoulli-half
MODEL_KEYS = ("model.phases", "model.with_uncertainty")

PathLike = Union[str, Path]
Records = Union[Mapping[str, np.ndarray], Sequence[Tuple[str, np.ndarray]]]


def _encode_record(name: str, array: np.ndarray) -> bytes:
    array = np.asarray(array)
    code = CODE_FOR_DTYPE.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ContractError(f"record {name!r}: unsupported dtype {array.dtype} (f64, f32 and u8 only)")
    encoded = name.encode("utf-8")
    header = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BI", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes(order="C")


def sct_write(path: PathLike, tensors: Records) -> Path:
    """
    Write named arrays to an SCT container

    Args:
        path: output file
        tensors: name -> array mapping or (name, array) pairs, written in order

    Raises:
        ContractError: duplicate name or unsupported dtype
    """
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    names = [name for name, _ in items]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise ContractError(f"duplicate record names: {duplicates}")

    payload = [MAGIC, struct.pack("<I", len(items))]
    payload.extend(_encode_record(name, array) for name, array in items)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(payload))
    logger.debug("wrote %d records to %s", len(items), path)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str, record: Optional[str]) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise SctParseError(f"truncated {what}: need {count} bytes, {len(self.data) - self.offset} left",
                                self.offset, record)
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str, record: Optional[str]) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, record))


def sct_parse(data: bytes) -> Dict[str, np.ndarray]:
    reader = _Reader(data)
    magic = reader.take(4, "magic", None)
    if magic != MAGIC:
        raise SctParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (count,) = reader.unpack("<I", "record count", None)

    records: Dict[str, np.ndarray] = {}
    for index in range(count):
        label = f"#{index}"
        (length,) = reader.unpack("<I", "name length", label)
        start = reader.offset
        try:
            name = reader.take(length, "name", label).decode("utf-8")
        except UnicodeDecodeError as e:
            raise SctParseError(f"name is not UTF-8: {e}", start, label) from e
        if name in records:
            raise SctParseError("duplicate record name", start, name)

        code_offset = reader.offset
        code, rank = reader.unpack("<BI", "dtype and rank", name)
        if code not in DTYPE_CODES:
            raise SctParseError(f"unknown dtype code {code}", code_offset, name)
        shape = reader.unpack(f"<{rank}Q", "extents", name)
        dtype = DTYPE_CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = reader.take(size, "payload", name)
        records[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    if reader.offset != len(data):
        raise SctParseError(f"{len(data) - reader.offset} trailing bytes after the last record", reader.offset)
    return records


def sct_read(path: PathLike) -> Dict[str, np.ndarray]:
    """Read every record of an SCT container, in file order"""
    return sct_parse(Path(path).read_bytes())


# ---------------------------------------------------------------- datasets
def sample_records(index: int, sample: Sample) -> List[Tuple[str, np.ndarray]]:
    if sample.masks.kind not in MASK_KINDS:
        raise ContractError(f"cannot store mask kind {sample.masks.kind!r}")
    prefix = f"{index:04d}/"
    return [
        (prefix + "cube", sample.cube.values),
        (prefix + "masks", sample.masks.values),
        (prefix + "measurement", sample.measurement.values),
        (prefix + "noise_sigma", np.array(sample.measurement.noise_sigma, dtype=np.float64)),
        (prefix + "mask_seed", np.array(sample.masks.seed, dtype=np.float64)),
        (prefix + "mask_kind", np.array(MASK_KINDS.index(sample.masks.kind), dtype=np.uint8)),
    ]


def write_dataset(path: PathLike, samples: Iterable[Sample]) -> Path:
    records = []
    for index, sample in enumerate(samples):
        records.extend(sample_records(index, sample))
    return sct_write(path, records)


def dataset_from_records(records: Mapping[str, np.ndarray]) -> List[Sample]:
    grouped: Dict[str, Dict[str, np.ndarray]] = {}
    for name, array in records.items():
        prefix, _, field_name = name.partition("/")
        if field_name in SAMPLE_FIELDS or field_name in OPTIONAL_FIELDS:
            grouped.setdefault(prefix, {})[field_name] = array

    samples = []
    for prefix in sorted(grouped):
        fields = grouped[prefix]
        missing = [name for name in SAMPLE_FIELDS if name not in fields]
        if missing:
            raise ContractError(f"dataset sample {prefix} lacks {missing}")
        seed = int(fields["mask_seed"])
        code = int(fields["mask_kind"]) if "mask_kind" in fields else 0
        if not 0 <= code < len(MASK_KINDS):
            raise ContractError(f"dataset sample {prefix} has unknown mask kind code {code}")
        kind = MASK_KINDS[code]
        masks = MaskSet(fields["masks"], seed=seed, kind=kind)
        measurement = Measurement(fields["measurement"], float(fields["noise_sigma"]), seed)
        samples.append(Sample(VideoCube(fields["cube"]), masks, measurement, scene=prefix))
    if not samples:
        raise ContractError("container holds no dataset samples")
    return samples


def read_dataset(path: PathLike) -> List[Sample]:
    return dataset_from_records(sct_read(path))


def read_cube(path: PathLike, record: Optional[str] = None) -> VideoCube:
    """A video cube from any SCT file: the named record, or the first rank-3 record"""
    records = sct_read(path)
    if record is not None:
        if record not in records:
            raise ContractError(f"{path} has no record {record!r}")
        return VideoCube(records[record])
    for name, array in records.items():
        if array.ndim == 3:
            logger.info("importing record %r from %s", name, path)
            return VideoCube(array)
    raise DimensionError(f"{path} holds no H×W×T record")


# ------------------------------------------------------------- checkpoints
def sidecar_path(path: PathLike) -> Path:
    return Path(f"{path}.cfg")


def save_checkpoint(path: PathLike, model, ctm: CtmConfig, train: TrainConfig) -> Path:
    """Parameters keyed by name path, plus the key=value sidecar `<path>.cfg`"""
    path = sct_write(path, model.state_dict())
    extras = {"model.phases": model.num_phases, "model.with_uncertainty": model.with_uncertainty}
    sidecar_path(path).write_text(dump_key_values(ctm, None, train, extras), encoding="utf-8")
    logger.info("saved checkpoint %s (%d tensors)", path, len(model.state_dict()))
    return path


def load_checkpoint(path: PathLike):
    """
    Rebuild an UnfoldingModel from a checkpoint and its sidecar

    Returns:
        (model, ctm config, train config)
    """
    from src.unfolding import UnfoldingModel

    values = load_key_values(sidecar_path(path))
    ctm, _, train, extras = build_configs(values, extra_keys=MODEL_KEYS)
    phases = int(extras.get("model.phases", train.phases))
    with_uncertainty = extras.get("model.with_uncertainty", str(train.with_uncertainty)).lower() == "true"
    model = UnfoldingModel(ctm, phases=phases, with_uncertainty=with_uncertainty)
    model.load_state_dict(sct_read(path))
    if with_uncertainty:
        model.uncertainty.freeze()
    return model, ctm, train

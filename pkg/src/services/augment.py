"""
Non-linear Motion Blur Augmentation

A blur kernel is a seeded piecewise-linear trajectory through the kernel
center, rasterized with bilinear weights and normalized to sum 1. Frames are
blurred by 2-D correlation with replicate borders:

    out[i, j] = sum_{a, b} k[a, b] * img[i + a - c, j + b - c],   c = size // 2

Object masks go through the same kernel, are re-binarized at a threshold and
give the corrected bounding boxes.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import ndimage

from src.errors import DatasetValidationError, DocumentParseError
from src.geometry import BBox, BinaryMask, mask_to_box
from src.models import Frame, FrameSet
from src.services.interactions import encode_offset

KERNEL_SUM_TOLERANCE = 1e-6
TRAJECTORY_STEP = 0.25
MASK_EXTENSIONS = (".png", ".pgm", ".ppm", ".bmp", ".tif", ".tiff")


class BlurKernel(BaseModel):
    """Odd-sized, non-negative, normalized correlation kernel"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def coerce_weights(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"Kernel must be square, got shape {arr.shape}")
        if arr.shape[0] % 2 == 0:
            raise ValueError(f"Kernel size must be odd, got {arr.shape[0]}")
        if (arr < 0).any():
            raise ValueError("Kernel weights must be non-negative")
        if abs(arr.sum() - 1.0) > KERNEL_SUM_TOLERANCE:
            raise ValueError(f"Kernel weights must sum to 1, got {arr.sum()}")
        arr.setflags(write=False)
        return arr

    @classmethod
    def delta(cls, size: int = 1) -> "BlurKernel":
        weights = np.zeros((size, size))
        weights[size // 2, size // 2] = 1.0
        return cls(weights=weights)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def center(self) -> int:
        return self.size // 2

    def is_delta(self) -> bool:
        return self.weights[self.center, self.center] == 1.0 and np.count_nonzero(self.weights) == 1


class Image(BaseModel):
    """Float image of shape (height, width, channels), samples in [0, 1]"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def coerce_pixels(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"Image must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError("Image samples must lie in [0, 1]")
        arr.setflags(write=False)
        return arr

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def samples(self) -> np.ndarray:
        """Row-major flattened samples"""
        return self.pixels.reshape(-1)


def _splat(weights: np.ndarray, x: float, y: float):
    """Distribute unit mass at (x, y) over the four neighbouring cells"""
    size = weights.shape[0]
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            r, c = y0 + dy, x0 + dx
            if 0 <= r < size and 0 <= c < size and wx * wy > 0:
                weights[r, c] += wx * wy


def _check_kernel_params(size: int, trajectory_points: int):
    if size < 1 or size % 2 == 0:
        raise ValueError(f"Kernel size must be a positive odd number, got {size}")
    if trajectory_points < 2:
        raise ValueError(f"Trajectory needs at least 2 points, got {trajectory_points}")


def generate_kernel(size: int, trajectory_points: int, seed: int) -> BlurKernel:
    """
    Sample a non-linear motion blur kernel.

    Args:
        size: Odd kernel side; 1 gives the delta kernel
        trajectory_points: Number of random control points, at least 2
        seed: Random seed; the same (size, points, seed) gives the same kernel

    Returns:
        BlurKernel normalized to sum 1
    """
    _check_kernel_params(size, trajectory_points)
    if size == 1:
        return BlurKernel.delta(1)

    rng = np.random.default_rng(seed)
    controls = rng.uniform(0, size - 1, size=(trajectory_points, 2))
    center = np.array([(size - 1) / 2.0] * 2)
    path = np.insert(controls, trajectory_points // 2, center, axis=0)

    weights = np.zeros((size, size), dtype=np.float64)
    for start, end in zip(path[:-1], path[1:]):
        steps = max(int(np.ceil(np.linalg.norm(end - start) / TRAJECTORY_STEP)), 1)
        for t in np.linspace(0.0, 1.0, steps + 1)[:-1]:
            x, y = start + t * (end - start)
            _splat(weights, x, y)
    _splat(weights, *path[-1])

    return BlurKernel(weights=weights / weights.sum())


def convolve(img: Image, kernel: BlurKernel) -> Image:
    """
    Correlate every channel with the kernel, replicating border pixels.

    Output dimensions equal the input's.
    """
    if kernel.is_delta():
        return Image(pixels=img.pixels)
    out = np.empty_like(img.pixels)
    for ch in range(img.channels):
        out[:, :, ch] = ndimage.correlate(img.pixels[:, :, ch], kernel.weights, mode="nearest")
    return Image(pixels=np.clip(out, 0.0, 1.0))


def _blur_mask(mask: BinaryMask, kernel: BlurKernel, threshold: float) -> BinaryMask:
    if kernel.is_delta():
        return mask
    field = ndimage.correlate(mask.bits.astype(np.float64), kernel.weights, mode="nearest")
    return BinaryMask(bits=field >= threshold)


def blur_frame(img: Image, masks: Sequence[BinaryMask], kernel: BlurKernel,
               threshold: float = 0.5) -> Tuple[Image, List[Optional[BBox]]]:
    """
    Blur an image and derive corrected boxes from its blurred object masks.

    Args:
        img: Frame image
        masks: One mask per object, same size as the image
        kernel: Blur kernel
        threshold: Re-binarization level for the blurred masks

    Returns:
        Blurred image and one box per mask (None when the blurred mask vanished)
    """
    if not 0 <= threshold <= 1:
        raise ValueError(f"Mask threshold must be in [0, 1], got {threshold}")
    for i, mask in enumerate(masks):
        if (mask.width, mask.height) != (img.width, img.height):
            raise DatasetValidationError(
                f"mask {i}", f"size {mask.width}x{mask.height} differs from image size {img.width}x{img.height}"
            )
    boxes = [mask_to_box(_blur_mask(mask, kernel, threshold)) for mask in masks]
    return convolve(img, kernel), boxes


class RasterFormat(BaseModel):
    """Storage layout of a source raster: sample type and untouched alpha plane"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dtype: str = "uint8"
    alpha: Optional[np.ndarray] = None

    @field_validator("dtype")
    @classmethod
    def check_dtype(cls, v):
        if not np.issubdtype(np.dtype(v), np.unsignedinteger):
            raise ValueError(f"Unsupported sample type {v}")
        return v

    @property
    def max_value(self) -> int:
        return int(np.iinfo(np.dtype(self.dtype)).max)


def read_raster(path: Union[str, Path]) -> Tuple[Image, RasterFormat]:
    """
    Load a raster file as colour samples in [0, 1] plus its storage format

    8- and 16-bit rasters are supported; an alpha channel is kept aside
    unscaled so it can be written back as it was read.

    Raises:
        DocumentParseError: If the file cannot be decoded or its sample type is unsupported
    """
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DocumentParseError("cannot decode image", source=str(path))
    if not np.issubdtype(raw.dtype, np.unsignedinteger):
        raise DocumentParseError(f"unsupported sample type {raw.dtype}", source=str(path))

    alpha = None
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            alpha = raw[:, :, 3].copy()
            raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
        elif raw.shape[2] == 3:
            raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
        else:
            raise DocumentParseError(f"unsupported channel count {raw.shape[2]}", source=str(path))

    fmt = RasterFormat(dtype=raw.dtype.name, alpha=alpha)
    return Image(pixels=raw.astype(np.float64) / fmt.max_value), fmt


def read_image(path: Union[str, Path]) -> Image:
    """Load a raster file as an RGB or grayscale Image"""
    return read_raster(path)[0]


def write_image(path: Union[str, Path], img: Image, fmt: Optional[RasterFormat] = None):
    """Quantize to the format's bit depth (round to nearest), restore alpha and write"""
    fmt = fmt or RasterFormat()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    top = fmt.max_value
    data = np.clip(np.rint(img.pixels * top), 0, top).astype(fmt.dtype)
    data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR) if img.channels == 3 else data[:, :, 0]
    if fmt.alpha is not None:
        if img.channels != 3 or fmt.alpha.shape != data.shape[:2]:
            raise ValueError(f"alpha plane {fmt.alpha.shape} does not fit image {img.pixels.shape}")
        data = np.dstack([data, fmt.alpha.astype(fmt.dtype)])
    if not cv2.imwrite(str(path), data):
        raise OSError(f"cannot write image {path}")


def read_mask(path: Union[str, Path]) -> BinaryMask:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise DocumentParseError("cannot decode mask", source=str(path))
    return BinaryMask.from_array(raw)


def export_kernel(path: Union[str, Path], kernel: BlurKernel):
    """Write the kernel as a plain-text grid"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, kernel.weights, fmt="%.10e")


def frame_seed(seed: int, frame_id: int) -> int:
    """Per-frame seed independent of processing order (both values non-negative)"""
    return int(np.random.SeedSequence([seed, frame_id]).generate_state(1)[0])


class MotionBlurAugmenter:
    """Dataset-level motion blur with mask-based box correction"""

    @staticmethod
    def find_mask(masks_dir: Path, file_name: str, annotation_id: int) -> Optional[Path]:
        """Mask of an annotation at <masks_dir>/<image stem>/<annotation id>.<ext>"""
        folder = masks_dir / Path(file_name).stem
        for ext in MASK_EXTENSIONS:
            candidate = folder / f"{annotation_id}{ext}"
            if candidate.is_file():
                return candidate
        return None

    @staticmethod
    def augment_frame(frame: Frame, images_dir: Path, masks_dir: Path, out_dir: Path,
                      kernel_size: int, trajectory_points: int, seed: int,
                      threshold: float) -> Frame:
        """
        Blur one frame, write its image and kernel, return the corrected frame

        Raises:
            DatasetValidationError: If the image or a mask does not match the frame size
        """
        record = f"frame {frame.frame_id}"
        img, fmt = read_raster(images_dir / frame.file_name)
        if (img.width, img.height) != (frame.width, frame.height):
            raise DatasetValidationError(
                record, f"image is {img.width}x{img.height}, annotation says {frame.width}x{frame.height}"
            )

        kernel = generate_kernel(kernel_size, trajectory_points, frame_seed(seed, frame.frame_id))

        ids, masks = [], []
        for ann in list(frame.hands) + list(frame.objects):
            mask_path = MotionBlurAugmenter.find_mask(masks_dir, frame.file_name, ann.id)
            if mask_path is None:
                logger.warning(f"No mask for annotation {ann.id} in {record}; keeping its box")
                continue
            mask = read_mask(mask_path)
            if (mask.width, mask.height) != (frame.width, frame.height):
                raise DatasetValidationError(
                    record, f"mask of annotation {ann.id} is {mask.width}x{mask.height}, "
                            f"image is {frame.width}x{frame.height}"
                )
            ids.append(ann.id)
            masks.append(mask)

        blurred, boxes = blur_frame(img, masks, kernel, threshold)
        corrected = {}
        for ann_id, box in zip(ids, boxes):
            if box is None:
                logger.warning(f"Blurred mask of annotation {ann_id} in {record} vanished; keeping its box")
                continue
            corrected[ann_id] = box

        write_image(out_dir / "images" / frame.file_name, blurred, fmt)
        export_kernel(out_dir / "kernels" / f"{frame.frame_id}.txt", kernel)
        return MotionBlurAugmenter.correct_frame(frame, corrected)

    @staticmethod
    def correct_frame(frame: Frame, boxes: dict) -> Frame:
        """Replace boxes by annotation id and re-encode in-contact offsets"""
        objects = tuple(o.model_copy(update={"box": boxes[o.id]}) if o.id in boxes else o
                        for o in frame.objects)
        hands = []
        for hand in frame.hands:
            box = boxes.get(hand.id, hand.box)
            update = {"box": box}
            if hand.in_contact:
                linked = sorted((o for o in objects if o.active and o.linked_hand == hand.id), key=lambda o: o.id)
                if linked:
                    update["offset"] = encode_offset(box, linked[0].box, frame.width, frame.height)
            hands.append(hand.model_copy(update=update))
        return frame.model_copy(update={"hands": tuple(hands), "objects": objects})

    @staticmethod
    def run(fs: FrameSet, images_dir: Union[str, Path], masks_dir: Union[str, Path],
            out_dir: Union[str, Path], kernel_size: int, trajectory_points: int,
            seed: int, threshold: float = 0.5, jobs: int = 1) -> FrameSet:
        """
        Blur every frame of a dataset

        Args:
            fs: Ground-truth annotations
            images_dir: Folder holding the frames named by file_name
            masks_dir: Folder of per-annotation masks
            out_dir: Output folder (images/ and kernels/ are created)
            kernel_size: Odd kernel side
            trajectory_points: Control points per kernel
            seed: Base seed, combined with each frame id
            threshold: Mask re-binarization level
            jobs: Frame-level parallelism degree

        Returns:
            FrameSet with corrected boxes
        """
        _check_kernel_params(kernel_size, trajectory_points)
        images_dir, masks_dir, out_dir = Path(images_dir), Path(masks_dir), Path(out_dir)
        args = (images_dir, masks_dir, out_dir, kernel_size, trajectory_points, seed, threshold)
        if jobs > 1 and len(fs.frames) > 1:
            frames = Parallel(n_jobs=jobs)(
                delayed(MotionBlurAugmenter.augment_frame)(frame, *args) for frame in fs.frames
            )
        else:
            frames = [MotionBlurAugmenter.augment_frame(frame, *args) for frame in fs.frames]

        logger.info(f"Blurred {len(frames)} frames (kernel {kernel_size}, {trajectory_points} points, seed {seed})")
        return FrameSet(frames=tuple(frames), categories=fs.categories, videos=fs.videos)

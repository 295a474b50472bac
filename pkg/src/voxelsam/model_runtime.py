"""Neural graph loading and execution behind a uniform tensor interface.

Two graph families are supported:

* ONNX exports of the segmentation model's two halves (heavy image
  encoder, light mask decoder), executed with onnxruntime (optional
  dependency, ``pip install voxelsam[onnx]``). The decoder follows the
  published export contract: inputs ``image_embeddings``,
  ``point_coords``, ``point_labels``, ``mask_input``, ``has_mask_input``,
  ``orig_im_size``; outputs upsampled logits, quality score and low-res
  logits. Normalization constants come from a ``<graph>.meta.json``
  sidecar {input_side, mean[3], std[3]}.
* Deterministic JSON stub graphs shipped with the package for tests and
  offline use: the encoder emits a seeded hash of the downsampled input,
  the decoder paints +10 logits within Chebyshev radius 2 of include
  points and -10 near exclude points (exclude wins) and -10 elsewhere.

Decoding never sees raw voxels: its inputs are embeddings and prompts
only, by construction of the call signatures.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import cv2
import numpy as np

from .errors import EmptyPrompt, ExecutionError, GraphLoadError, InterfaceMismatch
from .volume_io import SliceImage, rescale_to_uint8

if TYPE_CHECKING:  # pragma: no cover
    from .prompt_engine import ModelPrompt

MODEL_DIR_ENV = "VOXELSAM_MODEL_DIR"

STUB_RADIUS = 2
STUB_HI = 10.0
STUB_LO = -10.0

# input tensor names of the published decoder export
DECODER_INPUTS = (
    "image_embeddings", "point_coords", "point_labels",
    "mask_input", "has_mask_input", "orig_im_size",
)
DECODER_OUTPUTS = ("masks", "iou_predictions", "low_res_masks")


def resize_target(shape: tuple[int, int], side: int) -> tuple[int, int]:
    """Output (rows, cols) of an aspect-preserving resize of the long side
    to ``side``; the short side rounds half away from zero, minimum 1."""
    rows, cols = shape
    scale = side / max(rows, cols)
    return (max(1, int(rows * scale + 0.5)), max(1, int(cols * scale + 0.5)))


def resize_scale(shape: tuple[int, int], side: int) -> float:
    """The prompt-coordinate scale factor for a slice: side / long_side."""
    return side / max(shape)


@dataclass(frozen=True)
class DecodeResult:
    """Decoder output for one prompt set."""

    logits: np.ndarray          # (rows, cols) float32, at the original slice size
    low_res_logits: np.ndarray  # (L, L) float32, reusable as the next-call prior
    score: float                # predicted mask quality
    threshold: float = 0.0

    @property
    def mask(self) -> np.ndarray:
        return self.logits > self.threshold


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class EncoderGraph:
    """Handle to a loaded image-encoder graph.

    Attributes:
        input_side: square input side S; images are long-side resized to it.
        embedding_shape: (C, He, We), introspected from the graph.
        mean/std: per-channel normalization constants.
        model_hash: content hash of the graph file.
    """

    input_side: int
    embedding_shape: tuple[int, int, int]
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    model_hash: str
    source: str

    def run(self, x: np.ndarray) -> np.ndarray:
        """Execute on a preprocessed (3, S, S) float32 tensor."""
        raise NotImplementedError


class DecoderGraph:
    """Handle to a loaded mask-decoder graph.

    Stateless between calls and independent of the encoder: decoding must
    never load or execute the encoder graph.
    """

    input_side: int
    lowres_side: int
    model_hash: str
    source: str
    companion_encoder_hash: str | None = None

    def run(self, embedding: np.ndarray, coords: np.ndarray, labels: np.ndarray,
            prior: np.ndarray | None,
            original_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, float]:
        """Return (logits, low_res_logits, score) for one prompt set."""
        raise NotImplementedError


class StubEncoderGraph(EncoderGraph):
    """Deterministic test encoder: embedding = seeded hash of the
    block-averaged input. Runs in well under 10 ms per call."""

    def __init__(self, spec: dict, model_hash: str, source: str = "<memory>"):
        self.input_side = int(spec.get("input_side", 64))
        self.embedding_shape = tuple(int(v) for v in spec.get("embedding_shape", (8, 16, 16)))
        self.seed = int(spec.get("seed", 1234))
        self.mean = tuple(float(v) for v in spec.get("mean", (0.0, 0.0, 0.0)))
        self.std = tuple(float(v) for v in spec.get("std", (255.0, 255.0, 255.0)))
        self.model_hash = model_hash
        self.source = source
        c, he, we = self.embedding_shape
        if self.input_side % he or self.input_side % we:
            raise GraphLoadError(
                f"stub embedding grid {he}x{we} must divide input side {self.input_side}")

    def run(self, x: np.ndarray) -> np.ndarray:
        c, he, we = self.embedding_shape
        s = self.input_side
        pooled = x[0].reshape(he, s // he, we, s // we).mean(axis=(1, 3))
        digest = hashlib.blake2b(
            pooled.astype("<f4").tobytes() + self.seed.to_bytes(8, "little", signed=True),
            digest_size=16).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        return rng.standard_normal((c, he, we), dtype=np.float32)


class StubDecoderGraph(DecoderGraph):
    """Deterministic test decoder painting Chebyshev squares around points."""

    def __init__(self, spec: dict, model_hash: str, source: str = "<memory>"):
        self.input_side = int(spec.get("input_side", 64))
        self.lowres_side = int(spec.get("lowres_side", 16))
        self.radius = int(spec.get("radius", STUB_RADIUS))
        self.companion_encoder_hash = spec.get("companion_encoder_hash")
        self.model_hash = model_hash
        self.source = source

    def run(self, embedding, coords, labels, prior, original_size):
        rows, cols = original_size
        scale = resize_scale(original_size, self.input_side)
        logits = np.full((rows, cols), STUB_LO, dtype=np.float32)
        lowres = np.full((self.lowres_side, self.lowres_side), STUB_LO, dtype=np.float32)

        def paint(value: float, wanted: int) -> None:
            for (x_m, y_m), label in zip(coords, labels):
                if int(label) != wanted:
                    continue
                col = int(round(float(x_m) / scale - 0.5))
                row = int(round(float(y_m) / scale - 0.5))
                r0, r1 = max(0, row - self.radius), min(rows, row + self.radius + 1)
                c0, c1 = max(0, col - self.radius), min(cols, col + self.radius + 1)
                logits[r0:r1, c0:c1] = value
                lr = int(np.clip(y_m * self.lowres_side / self.input_side, 0, self.lowres_side - 1))
                lc = int(np.clip(x_m * self.lowres_side / self.input_side, 0, self.lowres_side - 1))
                lowres[lr, lc] = value

        paint(STUB_HI, 1)
        paint(STUB_LO, 0)  # exclude takes precedence
        score = 1.0 / (1.0 + 0.05 * len(coords))
        return logits, lowres, score


class OnnxEncoderGraph(EncoderGraph):
    def __init__(self, path: Path):
        session = _onnx_session(path)
        inputs = session.get_inputs()
        outputs = session.get_outputs()
        if len(inputs) != 1:
            raise InterfaceMismatch(
                f"encoder graph must take one image tensor, found {[i.name for i in inputs]}")
        out_shape = outputs[0].shape
        if len(out_shape) != 4 or any(not isinstance(d, int) for d in out_shape[1:]):
            raise InterfaceMismatch(f"encoder output shape {out_shape} is not a static (1,C,He,We)")
        meta = _read_meta_sidecar(path)
        self._session = session
        self._input_name = inputs[0].name
        self.input_side = int(meta["input_side"])
        self.mean = tuple(float(v) for v in meta["mean"])
        self.std = tuple(float(v) for v in meta["std"])
        self.embedding_shape = tuple(int(d) for d in out_shape[1:])
        self.model_hash = _file_hash(path)
        self.source = str(path)

    def run(self, x: np.ndarray) -> np.ndarray:
        try:
            (out,) = self._session.run(None, {self._input_name: x[np.newaxis]})
        except Exception as exc:
            raise ExecutionError(f"encoder execution failed: {exc}")
        return np.asarray(out[0], dtype=np.float32)


class OnnxDecoderGraph(DecoderGraph):
    def __init__(self, path: Path):
        session = _onnx_session(path)
        names = {i.name for i in session.get_inputs()}
        missing = [n for n in DECODER_INPUTS if n not in names]
        if missing:
            raise InterfaceMismatch(f"decoder graph is missing inputs {missing}", missing=missing)
        out_names = {o.name for o in session.get_outputs()}
        missing_out = [n for n in DECODER_OUTPUTS if n not in out_names]
        if missing_out:
            raise InterfaceMismatch(f"decoder graph is missing outputs {missing_out}",
                                    missing=missing_out)
        meta = _read_meta_sidecar(path)
        self._session = session
        self.input_side = int(meta["input_side"])
        self.lowres_side = int(meta.get("lowres_side", self.input_side // 4))
        self.companion_encoder_hash = meta.get("companion_encoder_hash")
        self.model_hash = _file_hash(path)
        self.source = str(path)

    def run(self, embedding, coords, labels, prior, original_size):
        lowres = self.lowres_side
        if prior is None:
            mask_input = np.zeros((1, 1, lowres, lowres), dtype=np.float32)
            has_mask = np.zeros(1, dtype=np.float32)
        else:
            mask_input = np.asarray(prior, dtype=np.float32).reshape(1, 1, lowres, lowres)
            has_mask = np.ones(1, dtype=np.float32)
        feeds = {
            "image_embeddings": np.asarray(embedding, dtype=np.float32)[np.newaxis],
            "point_coords": np.asarray(coords, dtype=np.float32)[np.newaxis],
            "point_labels": np.asarray(labels, dtype=np.float32)[np.newaxis],
            "mask_input": mask_input,
            "has_mask_input": has_mask,
            "orig_im_size": np.asarray(original_size, dtype=np.float32),
        }
        try:
            out = self._session.run(list(DECODER_OUTPUTS), feeds)
        except Exception as exc:
            raise ExecutionError(f"decoder execution failed: {exc}")
        masks, scores, low_res = out
        return (np.asarray(masks[0, 0], dtype=np.float32),
                np.asarray(low_res[0, 0], dtype=np.float32),
                float(np.asarray(scores).ravel()[0]))


def _onnx_session(path: Path):
    try:
        import onnxruntime
    except ImportError:
        raise GraphLoadError(
            "onnxruntime is not installed; install voxelsam[onnx] to load .onnx graphs")
    if not path.exists():
        raise GraphLoadError(f"no such graph file {path}", path=str(path))
    try:
        return onnxruntime.InferenceSession(str(path), providers=["CPUExecutionProvider"])
    except Exception as exc:
        raise GraphLoadError(f"cannot load {path}: {exc}", path=str(path))


def _read_meta_sidecar(path: Path) -> dict:
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    try:
        meta = json.loads(sidecar.read_text())
    except FileNotFoundError:
        raise GraphLoadError(f"missing normalization sidecar {sidecar}", path=str(sidecar))
    except (OSError, json.JSONDecodeError) as exc:
        raise GraphLoadError(f"bad sidecar {sidecar}: {exc}", path=str(sidecar))
    for key in ("input_side", "mean", "std"):
        if key not in meta:
            raise GraphLoadError(f"sidecar {sidecar} lacks {key!r}")
    return meta


def load_graph(path: str | Path, kind: str) -> EncoderGraph | DecoderGraph:
    """Load an encoder or decoder graph from an .onnx file or a JSON stub.

    Raises:
        GraphLoadError: unreadable file or unavailable runtime.
        InterfaceMismatch: the graph does not expose the documented tensors
            or is of the other kind.
    """
    if kind not in ("encoder", "decoder"):
        raise GraphLoadError(f"unknown graph kind {kind!r}")
    path = Path(path)
    if path.suffix == ".onnx":
        return OnnxEncoderGraph(path) if kind == "encoder" else OnnxDecoderGraph(path)
    if path.suffix == ".json":
        try:
            spec = json.loads(path.read_text())
        except FileNotFoundError:
            raise GraphLoadError(f"no such graph file {path}", path=str(path))
        except (OSError, json.JSONDecodeError) as exc:
            raise GraphLoadError(f"cannot parse stub graph {path}: {exc}", path=str(path))
        stub_kind = spec.get("stub")
        if stub_kind not in ("encoder", "decoder"):
            raise GraphLoadError(f"{path} is not a stub graph file", path=str(path))
        if stub_kind != kind:
            raise InterfaceMismatch(
                f"{path} is a stub {stub_kind}, not a {kind}", expected=kind, found=stub_kind)
        model_hash = _file_hash(path)
        cls = StubEncoderGraph if kind == "encoder" else StubDecoderGraph
        return cls(spec, model_hash, source=str(path))
    raise GraphLoadError(f"unsupported graph file {path} (.onnx or .json expected)",
                         path=str(path))


def preprocess(pixels: np.ndarray, graph: EncoderGraph) -> np.ndarray:
    """Resize/normalize/pad one uint8 slice into the encoder input tensor.

    The long side is resized to S with aspect preserved (bilinear,
    pixel-center aligned), the image replicated to 3 channels and
    normalized with the graph's mean/std, then zero-padded bottom/right
    to S x S so the pad region is exactly zero.
    """
    if pixels.dtype != np.uint8:
        pixels = rescale_to_uint8(pixels)
    s = graph.input_side
    tr, tc = resize_target(pixels.shape, s)
    if (tr, tc) != pixels.shape:
        resized = cv2.resize(pixels.astype(np.float32), (tc, tr),
                             interpolation=cv2.INTER_LINEAR)
    else:
        resized = pixels.astype(np.float32)
    mean = np.asarray(graph.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(graph.std, dtype=np.float32)[:, None, None]
    chw = (np.repeat(resized[np.newaxis], 3, axis=0) - mean) / std
    out = np.zeros((3, s, s), dtype=np.float32)
    out[:, :tr, :tc] = chw
    return out


def encode(graph: EncoderGraph, img: SliceImage) -> np.ndarray:
    """Compute the (C, He, We) embedding of one contrast-processed slice."""
    return graph.run(preprocess(img.pixels, graph))


def decode(graph: DecoderGraph, embedding: np.ndarray, prompt: "ModelPrompt",
           original_size: tuple[int, int]) -> DecodeResult:
    """Decode one prompt set against a precomputed embedding.

    ``prompt.coords`` must already be in encoder-input space (see
    prompt_engine.to_model_coords). Logits come back at ``original_size``;
    if a graph emits padded S x S logits instead, the padding is cropped
    and the content resized back.
    """
    coords = np.asarray(prompt.coords, dtype=np.float32).reshape(-1, 2)
    labels = np.asarray(prompt.labels, dtype=np.float32).reshape(-1)
    if coords.shape[0] == 0:
        raise EmptyPrompt("prompt has no points")
    if coords.shape[0] != labels.shape[0]:
        raise ExecutionError(
            f"{coords.shape[0]} coords vs {labels.shape[0]} labels")
    prior = prompt.prior_mask if getattr(prompt, "prior_mask", None) is not None else None

    logits, low_res, score = graph.run(embedding, coords, labels, prior, original_size)
    rows, cols = original_size
    if logits.shape != (rows, cols):
        tr, tc = resize_target(original_size, graph.input_side)
        cropped = logits[:tr, :tc]
        logits = cv2.resize(cropped, (cols, rows), interpolation=cv2.INTER_LINEAR)
    return DecodeResult(logits=np.asarray(logits, dtype=np.float32),
                        low_res_logits=np.asarray(low_res, dtype=np.float32),
                        score=float(score))


# --- stub shipping and model discovery ----------------------------------

@dataclass(frozen=True)
class StubGraphPair:
    """The deterministic encoder/decoder stubs distributed with the repo."""

    encoder: StubEncoderGraph
    decoder: StubDecoderGraph

    @classmethod
    def create(cls, *, input_side: int = 64, embedding_shape: Sequence[int] = (8, 16, 16),
               seed: int = 1234) -> "StubGraphPair":
        enc_spec = {
            "stub": "encoder", "input_side": input_side,
            "embedding_shape": list(embedding_shape), "seed": seed,
            "mean": [0.0, 0.0, 0.0], "std": [255.0, 255.0, 255.0],
        }
        enc_hash = hashlib.sha256(
            json.dumps(enc_spec, sort_keys=True).encode()).hexdigest()
        dec_spec = {
            "stub": "decoder", "input_side": input_side, "radius": STUB_RADIUS,
            "lowres_side": max(1, input_side // 4),
            "companion_encoder_hash": enc_hash,
        }
        dec_hash = hashlib.sha256(
            json.dumps(dec_spec, sort_keys=True).encode()).hexdigest()
        return cls(encoder=StubEncoderGraph(enc_spec, enc_hash),
                   decoder=StubDecoderGraph(dec_spec, dec_hash))


def write_stub_models(directory: str | Path, *, input_side: int = 64,
                      embedding_shape: Sequence[int] = (8, 16, 16),
                      seed: int = 1234) -> tuple[Path, Path]:
    """Write a loadable stub graph pair into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    enc_spec = {
        "stub": "encoder", "input_side": input_side,
        "embedding_shape": list(embedding_shape), "seed": seed,
        "mean": [0.0, 0.0, 0.0], "std": [255.0, 255.0, 255.0],
    }
    enc_path = directory / "encoder.stub.json"
    enc_path.write_text(json.dumps(enc_spec, indent=2) + "\n")
    dec_spec = {
        "stub": "decoder", "input_side": input_side, "radius": STUB_RADIUS,
        "lowres_side": max(1, input_side // 4),
        "companion_encoder_hash": _file_hash(enc_path),
    }
    dec_path = directory / "decoder.stub.json"
    dec_path.write_text(json.dumps(dec_spec, indent=2) + "\n")
    return enc_path, dec_path


def stub_model_dir() -> Path:
    """Directory of the stub graphs shipped inside the package."""
    return Path(__file__).parent / "models"


def resolve_model_dir(explicit: str | Path | None = None) -> Path | None:
    """Model directory from an explicit path or the environment, if any."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(MODEL_DIR_ENV)
    return Path(env) if env else None


def _find(directory: Path, stem: str) -> Path | None:
    for name in (f"{stem}.onnx", f"{stem}.stub.json"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    return None


def find_encoder(directory: Path) -> Path | None:
    return _find(directory, "encoder")


def find_decoder(directory: Path) -> Path | None:
    return _find(directory, "decoder")

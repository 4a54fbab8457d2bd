"""Text-modified image composition network.

Forward pass, for an image vector i and text vector t (x = [i, t]):

    a      = ReLU(W_lin x + b_lin)            shared joint encoding
    f      = W_im1 a + b_im1                  joint feature, image-sized
    f_ref  = sigmoid(f * i)                   gated reference feature
    f_r    = W_t1 a + b_t1
    f_res  = W_t2 ReLU(f_r) + b_t2            learned residual correction
    out    = w_r * f_ref + w_d * f_res

W_lin is one shared tensor: its gradient accumulates contributions from
both the reference and the residual paths. The gate has two variants:

* ``sigmoid_after_product`` (default): f_ref = sigmoid(f * i)
* ``sigmoid_before_product`` (the TIRG convention): f_ref = sigmoid(f) * i

The backward pass is written by hand against the cached forward trace and
returns gradients for every parameter, including the scalar mixture
weights, plus input gradients for testability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ContractError, ManifestError, ParameterError, ShapeError
from .store import Dataset, normalize_concat

GATE_VARIANTS = ("sigmoid_after_product", "sigmoid_before_product")

EMBED_MODES = ("fused", "image_only", "text_only", "concat")

CHECKPOINT_VERSION = 1

# Fixed serialization order of the parameter tensors in checkpoint blobs.
TENSOR_ORDER = ("w_lin", "b_lin", "w_im1", "b_im1", "w_t1", "b_t1", "w_t2", "b_t2", "w_r", "w_d")


@dataclass
class FusionParams:
    """All learnable weights of the composition network."""

    dim_image: int
    dim_text: int
    hidden: int
    hidden2: int
    gate_variant: str
    l2_normalize_output: bool
    w_lin: np.ndarray
    b_lin: np.ndarray
    w_im1: np.ndarray
    b_im1: np.ndarray
    w_t1: np.ndarray
    b_t1: np.ndarray
    w_t2: np.ndarray
    b_t2: np.ndarray
    w_r: np.ndarray
    w_d: np.ndarray

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Live views of every parameter tensor, in serialization order."""
        return {name: getattr(self, name) for name in TENSOR_ORDER}

    def expected_shapes(self) -> dict[str, tuple]:
        d_in = self.dim_image + self.dim_text
        return {
            "w_lin": (self.hidden, d_in),
            "b_lin": (self.hidden,),
            "w_im1": (self.dim_image, self.hidden),
            "b_im1": (self.dim_image,),
            "w_t1": (self.hidden2, self.hidden),
            "b_t1": (self.hidden2,),
            "w_t2": (self.dim_image, self.hidden2),
            "b_t2": (self.dim_image,),
            "w_r": (),
            "w_d": (),
        }

    def validate(self) -> None:
        if self.gate_variant not in GATE_VARIANTS:
            raise ParameterError(f"unknown gate_variant {self.gate_variant!r}")
        for name, shape in self.expected_shapes().items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ShapeError(f"parameter {name} has shape {actual}, expected {shape}")

    def copy(self) -> "FusionParams":
        kwargs = {name: getattr(self, name).copy() for name in TENSOR_ORDER}
        return FusionParams(
            dim_image=self.dim_image,
            dim_text=self.dim_text,
            hidden=self.hidden,
            hidden2=self.hidden2,
            gate_variant=self.gate_variant,
            l2_normalize_output=self.l2_normalize_output,
            **kwargs,
        )

    def astype(self, dtype) -> "FusionParams":
        kwargs = {name: getattr(self, name).astype(dtype) for name in TENSOR_ORDER}
        return FusionParams(
            dim_image=self.dim_image,
            dim_text=self.dim_text,
            hidden=self.hidden,
            hidden2=self.hidden2,
            gate_variant=self.gate_variant,
            l2_normalize_output=self.l2_normalize_output,
            **kwargs,
        )


def init_fusion_params(
    dim_image: int,
    dim_text: int,
    hidden: int | None = None,
    hidden2: int | None = None,
    gate_variant: str = "sigmoid_after_product",
    l2_normalize_output: bool = False,
    seed=0,
    dtype=nn.DTYPE,
) -> FusionParams:
    """Seeded initialization: Glorot-uniform weights, zero biases, w_r=1, w_d=0.1.

    Hidden widths default to dim_image (both layers), keeping the network
    proportional to the embedding size.
    """
    if dim_image < 1 or dim_text < 1:
        raise ParameterError(f"dims must be >= 1, got {dim_image}/{dim_text}")
    hidden = hidden or dim_image
    hidden2 = hidden2 or dim_image
    if gate_variant not in GATE_VARIANTS:
        raise ParameterError(f"unknown gate_variant {gate_variant!r}")
    rng = np.random.default_rng(seed)
    d_in = dim_image + dim_text
    params = FusionParams(
        dim_image=dim_image,
        dim_text=dim_text,
        hidden=hidden,
        hidden2=hidden2,
        gate_variant=gate_variant,
        l2_normalize_output=l2_normalize_output,
        w_lin=nn.glorot_uniform(rng, hidden, d_in, dtype),
        b_lin=np.zeros(hidden, dtype=dtype),
        w_im1=nn.glorot_uniform(rng, dim_image, hidden, dtype),
        b_im1=np.zeros(dim_image, dtype=dtype),
        w_t1=nn.glorot_uniform(rng, hidden2, hidden, dtype),
        b_t1=np.zeros(hidden2, dtype=dtype),
        w_t2=nn.glorot_uniform(rng, dim_image, hidden2, dtype),
        b_t2=np.zeros(dim_image, dtype=dtype),
        w_r=np.asarray(1.0, dtype=dtype),
        w_d=np.asarray(0.1, dtype=dtype),
    )
    params.validate()
    return params


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass, enough for exact backprop."""

    image_vec: np.ndarray
    text_vec: np.ndarray
    x_cat: np.ndarray
    z_joint: np.ndarray
    a_joint: np.ndarray
    f: np.ndarray
    gate_pre: np.ndarray
    gate_sig: np.ndarray
    f_ref: np.ndarray
    f_r: np.ndarray
    a_res: np.ndarray
    f_res: np.ndarray
    raw_out: np.ndarray
    out_norm: np.ndarray | None
    output: np.ndarray


def fusion_forward(params: FusionParams, image_vec: np.ndarray, text_vec: np.ndarray):
    """Compose image and text vectors; returns (output, trace).

    Accepts single vectors or batches of row vectors. Output has the image
    dimension (one row per input row in the batched case).
    """
    if image_vec.shape[-1] != params.dim_image or text_vec.shape[-1] != params.dim_text:
        raise ShapeError(
            f"input dims {image_vec.shape}/{text_vec.shape} do not match "
            f"params dims {params.dim_image}/{params.dim_text}"
        )
    if image_vec.ndim != text_vec.ndim or image_vec.shape[:-1] != text_vec.shape[:-1]:
        raise ShapeError(
            f"image batch shape {image_vec.shape} does not match text batch shape {text_vec.shape}"
        )

    x = np.concatenate([image_vec, text_vec], axis=-1)
    z_joint = nn.linear_forward(params.w_lin, params.b_lin, x)
    a_joint = nn.relu(z_joint)
    f = nn.linear_forward(params.w_im1, params.b_im1, a_joint)

    if params.gate_variant == "sigmoid_after_product":
        gate_pre = nn.hadamard(f, image_vec)
        gate_sig = nn.sigmoid(gate_pre)
        f_ref = gate_sig
    else:
        gate_pre = f
        gate_sig = nn.sigmoid(gate_pre)
        f_ref = nn.hadamard(gate_sig, image_vec)

    f_r = nn.linear_forward(params.w_t1, params.b_t1, a_joint)
    a_res = nn.relu(f_r)
    f_res = nn.linear_forward(params.w_t2, params.b_t2, a_res)

    raw_out = params.w_r * f_ref + params.w_d * f_res
    out_norm = None
    output = raw_out
    if params.l2_normalize_output:
        out_norm = np.linalg.norm(raw_out.astype(np.float64, copy=False), axis=-1, keepdims=True)
        output = (raw_out / out_norm).astype(raw_out.dtype, copy=False)

    trace = ForwardTrace(
        image_vec=image_vec,
        text_vec=text_vec,
        x_cat=x,
        z_joint=z_joint,
        a_joint=a_joint,
        f=f,
        gate_pre=gate_pre,
        gate_sig=gate_sig,
        f_ref=f_ref,
        f_r=f_r,
        a_res=a_res,
        f_res=f_res,
        raw_out=raw_out,
        out_norm=out_norm,
        output=output,
    )
    return output, trace


def fusion_backward(trace: ForwardTrace, params: FusionParams, upstream_grad: np.ndarray):
    """Backpropagate upstream_grad through a cached forward pass.

    Returns (grads, grad_image_vec, grad_text_vec) where grads maps every
    parameter name to its gradient buffer. W_lin's entry is the sum of the
    contributions from its two uses.
    """
    if trace.x_cat.shape[-1] != params.dim_image + params.dim_text or trace.a_joint.shape[
        -1
    ] != params.hidden:
        raise ContractError(
            f"trace shapes {trace.x_cat.shape}/{trace.a_joint.shape} do not match params "
            f"(dims {params.dim_image}+{params.dim_text}, hidden {params.hidden}); stale trace?"
        )
    if upstream_grad.shape != trace.output.shape:
        raise ContractError(
            f"upstream grad shape {upstream_grad.shape} != output shape {trace.output.shape}"
        )

    g = upstream_grad
    if params.l2_normalize_output:
        # d(r/|r|) pulled back: (g - (g.y) y) / |r| per row
        y = trace.output
        inner = np.sum(g * y, axis=-1, keepdims=True)
        g = ((g - inner * y) / trace.out_norm).astype(g.dtype, copy=False)

    g64 = g.astype(np.float64, copy=False)
    d_wr = np.asarray((g64 * trace.f_ref).sum(), dtype=params.w_r.dtype)
    d_wd = np.asarray((g64 * trace.f_res).sum(), dtype=params.w_d.dtype)

    g_ref = params.w_r * g
    g_res = params.w_d * g

    if params.gate_variant == "sigmoid_after_product":
        g_u = nn.sigmoid_backward(trace.gate_sig, g_ref)
        g_f = nn.hadamard(g_u, trace.image_vec)
        g_img_gate = nn.hadamard(g_u, trace.f)
    else:
        g_sig = nn.hadamard(g_ref, trace.image_vec)
        g_f = nn.sigmoid_backward(trace.gate_sig, g_sig)
        g_img_gate = nn.hadamard(g_ref, trace.gate_sig)

    d_wt2, d_bt2, g_a_res = nn.linear_backward(params.w_t2, trace.a_res, g_res)
    g_fr = nn.relu_backward(trace.f_r, g_a_res)
    d_wt1, d_bt1, g_a_joint_res = nn.linear_backward(params.w_t1, trace.a_joint, g_fr)

    d_wim1, d_bim1, g_a_joint_ref = nn.linear_backward(params.w_im1, trace.a_joint, g_f)

    g_a_joint = g_a_joint_ref + g_a_joint_res
    g_z = nn.relu_backward(trace.z_joint, g_a_joint)
    d_wlin, d_blin, g_x = nn.linear_backward(params.w_lin, trace.x_cat, g_z)

    grad_image = g_x[..., : params.dim_image] + g_img_gate
    grad_text = g_x[..., params.dim_image :]

    grads = {
        "w_lin": d_wlin,
        "b_lin": d_blin,
        "w_im1": d_wim1,
        "b_im1": d_bim1,
        "w_t1": d_wt1,
        "b_t1": d_bt1,
        "w_t2": d_wt2,
        "b_t2": d_bt2,
        "w_r": d_wr,
        "w_d": d_wd,
    }
    return grads, grad_image, grad_text


def stack_vectors(records) -> tuple[np.ndarray, np.ndarray]:
    """Stack record vectors into (image_matrix, text_matrix)."""
    image = np.stack([r.image_vec for r in records]) if records else np.zeros((0, 0))
    text = np.stack([r.text_vec for r in records]) if records else np.zeros((0, 0))
    return image, text


def embed_dataset(params: FusionParams | None, records, mode: str = "fused") -> np.ndarray:
    """One embedding row per record under the requested mode.

    fused      -- composition network output (requires params)
    image_only -- image vectors unchanged
    text_only  -- text vectors unchanged
    concat     -- per-modality L2 normalization, then concatenation
    """
    if mode not in EMBED_MODES:
        raise ParameterError(f"unknown embedding mode {mode!r}; expected one of {EMBED_MODES}")
    if isinstance(records, Dataset):
        records = records.records
    image, text = stack_vectors(records)
    if mode == "image_only":
        return image
    if mode == "text_only":
        return text
    if mode == "concat":
        rows = [normalize_concat(r.image_vec, r.text_vec) for r in records]
        return np.stack(rows) if rows else np.zeros((0, 0))
    if params is None:
        raise ParameterError("mode 'fused' requires fusion parameters")
    output, _ = fusion_forward(params, image, text)
    return output


def save_checkpoint(
    params: FusionParams,
    json_path,
    blob_path,
    seed: int = 0,
    step: int = 0,
    extra_tensors: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a JSON header plus an .f32 blob of tensors in TENSOR_ORDER.

    `extra_tensors` (e.g. a classifier head) are appended after the fusion
    tensors, in the given order, and listed in the header by name.
    """
    tensors = dict(params.named_tensors())
    if extra_tensors:
        for name, arr in extra_tensors.items():
            if name in tensors:
                raise ParameterError(f"extra tensor name {name!r} collides with a fusion tensor")
            tensors[name] = arr
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = arr.astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "dim_image": params.dim_image,
        "dim_text": params.dim_text,
        "hidden": params.hidden,
        "hidden2": params.hidden2,
        "gate_variant": params.gate_variant,
        "l2_normalize_output": params.l2_normalize_output,
        "seed": seed,
        "step": step,
        "tensors": entries,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(json_path, blob_path):
    """Load (params, extra_tensors, header) written by save_checkpoint."""
    with open(json_path, "r", encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as e:
            raise ManifestError(
                f"{json_path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
            ) from e
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ParameterError(f"{json_path}: unsupported checkpoint version")
    with open(blob_path, "rb") as fh:
        blob = fh.read()

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).copy()

    missing = [name for name in TENSOR_ORDER if name not in arrays]
    if missing:
        raise ParameterError(f"{json_path}: checkpoint missing tensors {missing}")
    params = FusionParams(
        dim_image=header["dim_image"],
        dim_text=header["dim_text"],
        hidden=header["hidden"],
        hidden2=header["hidden2"],
        gate_variant=header["gate_variant"],
        l2_normalize_output=header["l2_normalize_output"],
        **{name: arrays[name] for name in TENSOR_ORDER},
    )
    params.validate()
    extra = {name: arr for name, arr in arrays.items() if name not in TENSOR_ORDER}
    return params, extra, header

"""Training machinery: parameter container, full-pipeline forward and
backward passes on the autodiff tape, Adam with L2 weight decay, and a
central-difference gradient checker.

Everything runs in float64 so finite-difference verification at
perturbation 1e-5 is meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .conv import GateParams, LayerParams, RoleEncoder, layer_forward
from .errors import DataError, NumericalError
from .graph import GraphView, HeteroGraph, Role, samples_to_arrays
from .predict import PredictorParams, pair_loss

CHECKPOINT_VERSION = 1


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ModelParams:
    """All trainable tensors plus Adam state.

    ``latent_dim`` is the dimension of the final fused embedding;
    concat fusion therefore runs each role encoder at half width so the
    fusion modes compare at an equal representation budget. Weight decay
    applies to weight matrices, attention vectors, and trainable
    embedding tables; never to the fusion gate or biases.
    """

    latent_dim: int
    user_dim: int
    object_dim: int
    fusion: str
    role_dim: int
    proj_user: Tensor
    proj_obj: Tensor
    trustor: RoleEncoder | None
    trustee: RoleEncoder | None
    gate: GateParams
    predictor: PredictorParams
    h0_users: Tensor | None = None
    h0_objects: Tensor | None = None
    step: int = 0
    moments: dict = field(default_factory=dict)

    def named(self):
        """Stable (name, tensor, decay) iteration over all trainables."""
        out = [
            ("proj_user", self.proj_user, True),
            ("proj_obj", self.proj_obj, True),
        ]
        for role_name, enc in (("trustor", self.trustor), ("trustee", self.trustee)):
            if enc is None:
                continue
            for li, lp in enumerate(enc.layers):
                base = f"{role_name}/layer{li}"
                out += [
                    (f"{base}/w_user", lp.w_user, True),
                    (f"{base}/w_obj", lp.w_obj, True),
                    (f"{base}/eta_user", lp.eta_user, True),
                    (f"{base}/eta_obj", lp.eta_obj, True),
                    (f"{base}/gamma", lp.gamma, True),
                ]
        out.append(("gate/raw", self.gate.raw_gate, False))
        out.append(("predictor/weight", self.predictor.weight, True))
        out.append(("predictor/bias", self.predictor.bias, False))
        if self.h0_users is not None and self.h0_users.requires_grad:
            out.append(("h0/users", self.h0_users, True))
        if self.h0_objects is not None and self.h0_objects.requires_grad:
            out.append(("h0/objects", self.h0_objects, True))
        return out

    def assert_finite(self) -> None:
        for name, tensor, _ in self.named():
            if not np.all(np.isfinite(tensor.value)):
                raise NumericalError(f"parameter {name} contains non-finite values")

    def zdim(self) -> int:
        return self.latent_dim

    def set_initial_tables(self, h0_users, h0_objects, trainable: bool) -> None:
        """Attach initial embedding tables; trainable tables join the tape."""
        hu = np.asarray(h0_users.vectors if hasattr(h0_users, "vectors") else h0_users)
        ho = np.asarray(h0_objects.vectors if hasattr(h0_objects, "vectors") else h0_objects)
        self.h0_users = Tensor(hu.copy(), requires_grad=trainable, name="h0/users")
        self.h0_objects = Tensor(ho.copy(), requires_grad=trainable, name="h0/objects")


def _init_layer(rng, dim: int) -> LayerParams:
    return LayerParams(
        w_user=Tensor(_glorot(rng, dim, dim, (dim, dim))),
        w_obj=Tensor(_glorot(rng, dim, dim, (dim, dim))),
        eta_user=Tensor(_glorot(rng, 2 * dim, 1, (2 * dim,))),
        eta_obj=Tensor(_glorot(rng, 2 * dim, 1, (2 * dim,))),
        gamma=Tensor(_glorot(rng, 2 * dim, 1, (2 * dim,))),
    )


def init_params(
    seed: int,
    user_dim: int,
    object_dim: int,
    latent_dim: int,
    fusion: str = "gate",
    trustor_enabled: bool = True,
    trustee_enabled: bool = True,
    num_layers: int = 2,
) -> ModelParams:
    """Fresh parameters; encoders for both roles are independent.

    With concat fusion both halves of the final embedding come from one
    role each, so the per-role encoder width is latent_dim / 2; gate
    fusion (and single-role setups) encode at the full latent width. The
    predictor always reads 2 * latent_dim pair features.
    """
    if fusion not in ("gate", "concat"):
        raise DataError(f"unknown fusion mode {fusion!r}")
    if not (trustor_enabled or trustee_enabled):
        raise DataError("at least one role must be enabled")
    both = trustor_enabled and trustee_enabled
    if fusion == "concat" and both:
        if latent_dim % 2:
            raise DataError("concat fusion needs an even latent_dim")
        role_dim = latent_dim // 2
    else:
        role_dim = latent_dim
    rng = np.random.default_rng(seed)
    proj_user = Tensor(_glorot(rng, user_dim, role_dim, (user_dim, role_dim)))
    proj_obj = Tensor(_glorot(rng, object_dim, role_dim, (object_dim, role_dim)))
    trustor = (
        RoleEncoder(Role.TRUSTOR, [_init_layer(rng, role_dim) for _ in range(num_layers)])
        if trustor_enabled
        else None
    )
    trustee = (
        RoleEncoder(Role.TRUSTEE, [_init_layer(rng, role_dim) for _ in range(num_layers)])
        if trustee_enabled
        else None
    )
    # alternating-sign start biases alternate dimensions toward opposite
    # roles; a symmetric 0.5 start mixes the roles' gradients early on
    gate = GateParams(Tensor(np.where(np.arange(role_dim) % 2 == 0, 1.0, -1.0)))
    predictor = PredictorParams(
        weight=Tensor(_glorot(rng, 2 * latent_dim, 2, (2 * latent_dim, 2))),
        bias=Tensor(np.zeros(2)),
    )
    return ModelParams(
        latent_dim=latent_dim,
        user_dim=user_dim,
        object_dim=object_dim,
        fusion=fusion,
        role_dim=role_dim,
        proj_user=proj_user,
        proj_obj=proj_obj,
        trustor=trustor,
        trustee=trustee,
        gate=gate,
        predictor=predictor,
    )


# ---------------------------------------------------------------------------
# forward / backward


def fused_users(views: dict, params: ModelParams, h0_users, h0_objects):
    """Tape-aware pipeline up to the fused per-user embeddings."""
    if h0_users is None:
        hu = params.h0_users
    else:
        hu = ad.as_tensor(h0_users.vectors if hasattr(h0_users, "vectors") else h0_users)
    if h0_objects is None:
        ho = params.h0_objects
    else:
        ho = ad.as_tensor(h0_objects.vectors if hasattr(h0_objects, "vectors") else h0_objects)
    if hu is None or ho is None:
        raise DataError("initial embeddings missing: pass tables or attach them to params")

    h0 = ad.concat_rows(ad.matmul(hu, params.proj_user), ad.matmul(ho, params.proj_obj))
    role_users = {}
    for enc in (params.trustor, params.trustee):
        if enc is None:
            continue
        view = views[enc.role]
        h = h0
        for layer in enc.layers:
            h = layer_forward(h, view, layer)
        role_users[enc.role] = ad.slice_rows(h, 0, view.num_users)

    if len(role_users) == 2:
        z_tor = role_users[Role.TRUSTOR]
        z_tee = role_users[Role.TRUSTEE]
        if params.fusion == "concat":
            return ad.concat_cols(z_tor, z_tee)
        g = ad.sigmoid(params.gate.raw_gate)
        return g * z_tor + (1.0 - g) * z_tee
    (only,) = role_users.values()
    return only


def forward(
    graph: HeteroGraph,
    views: dict,
    h0_users,
    h0_objects,
    params: ModelParams,
    samples,
) -> tuple[float, Tape]:
    """Full pipeline loss over the samples; returns the recording tape."""
    if len(samples) == 0:
        raise DataError("forward needs a non-empty sample batch")
    i, j, y = samples_to_arrays(samples)
    with Tape() as tape:
        z = fused_users(views, params, h0_users, h0_objects)
        loss = pair_loss(z, i, j, y, params.predictor)
        tape.mark_output(loss)
    return loss.item(), tape


def backward(tape: Tape) -> dict:
    """Gradients for every recorded tensor; rejects non-finite values."""
    grads = tape.gradients()
    for tensor, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {tensor!r}")
    return grads


def adam_step(
    params: ModelParams,
    grads: dict,
    lr: float = 0.005,
    weight_decay: float = 5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ModelParams:
    """In-place Adam update; L2 decay is added to decay-flagged gradients."""
    params.step += 1
    t = params.step
    for name, tensor, decay in params.named():
        g = grads.get(tensor)
        if g is None:
            g = np.zeros_like(tensor.value)
        if decay and weight_decay:
            g = g + weight_decay * tensor.value
        m, v = params.moments.get(name, (np.zeros_like(tensor.value), np.zeros_like(tensor.value)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        params.moments[name] = (m, v)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        tensor.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# ---------------------------------------------------------------------------
# gradient verification


@dataclass(frozen=True)
class PipelineFixture:
    """Small bundle sufficient to run forward(): graph, views, tables, samples."""

    graph: HeteroGraph
    views: dict
    h0_users: np.ndarray
    h0_objects: np.ndarray
    samples: list


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict
    passed: bool

    def __str__(self) -> str:
        lines = [f"gradient check (tolerance {self.tolerance:g}):"]
        for name, err in sorted(self.errors.items()):
            flag = "ok " if err < self.tolerance else "FAIL"
            lines.append(f"  [{flag}] {name:<28} max rel err {err:.3e}")
        lines.append("PASSED" if self.passed else "FAILED")
        return "\n".join(lines)


def grad_check(
    params: ModelParams,
    fixture: PipelineFixture,
    tolerance: float = 1e-4,
    perturbation: float = 1e-5,
    corrupt_param: str | None = None,
) -> GradCheckReport:
    """Compare tape gradients with central differences, entry by entry.

    ``corrupt_param`` deliberately perturbs one analytic gradient before
    comparing; it exists so negative-control tests can prove the check
    has teeth.
    """

    def loss_value() -> float:
        loss, _ = forward(
            fixture.graph, fixture.views, fixture.h0_users, fixture.h0_objects, params, fixture.samples
        )
        return loss

    _, tape = forward(
        fixture.graph, fixture.views, fixture.h0_users, fixture.h0_objects, params, fixture.samples
    )
    grads = backward(tape)
    analytic = {name: grads.get(tensor, np.zeros_like(tensor.value)) for name, tensor, _ in params.named()}
    if corrupt_param is not None:
        if corrupt_param not in analytic:
            raise DataError(f"unknown parameter {corrupt_param!r}")
        bad = analytic[corrupt_param].copy()
        bad.reshape(-1)[0] += 10.0 * (np.abs(bad).mean() + 1.0)
        analytic[corrupt_param] = bad

    errors: dict[str, float] = {}
    for name, tensor, _ in params.named():
        value = tensor.value
        flat = value.reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + perturbation
            up = loss_value()
            flat[idx] = orig - perturbation
            down = loss_value()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * perturbation)
            a = analytic[name].reshape(-1)[idx]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    passed = all(err < tolerance for err in errors.values())
    return GradCheckReport(tolerance=tolerance, errors=errors, passed=passed)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: ModelParams, path) -> None:
    """Versioned npz dump of all trainables, moments, and shape metadata."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "latent_dim": params.latent_dim,
        "user_dim": params.user_dim,
        "object_dim": params.object_dim,
        "fusion": params.fusion,
        "trustor": params.trustor is not None,
        "trustee": params.trustee is not None,
        "num_layers": len(params.trustor.layers) if params.trustor else len(params.trustee.layers),
        "step": params.step,
        "has_h0": params.h0_users is not None,
        "h0_trainable": bool(params.h0_users is not None and params.h0_users.requires_grad),
    }
    arrays = {f"param::{name}": tensor.value for name, tensor, _ in params.named()}
    if params.h0_users is not None and not params.h0_users.requires_grad:
        arrays["frozen::h0/users"] = params.h0_users.value
        arrays["frozen::h0/objects"] = params.h0_objects.value
    for name, (m, v) in params.moments.items():
        arrays[f"moment_m::{name}"] = m
        arrays[f"moment_v::{name}"] = v
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_params(path) -> ModelParams:
    """Rebuild a ModelParams from a checkpoint written by save_params."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(
                f"unsupported checkpoint version {meta.get('version')!r}"
            )
        params = init_params(
            seed=0,
            user_dim=meta["user_dim"],
            object_dim=meta["object_dim"],
            latent_dim=meta["latent_dim"],
            fusion=meta["fusion"],
            trustor_enabled=meta["trustor"],
            trustee_enabled=meta["trustee"],
            num_layers=meta["num_layers"],
        )
        params.step = meta["step"]
        if meta["has_h0"]:
            if meta["h0_trainable"]:
                hu = data["param::h0/users"]
                ho = data["param::h0/objects"]
            else:
                hu = data["frozen::h0/users"]
                ho = data["frozen::h0/objects"]
            params.set_initial_tables(hu, ho, trainable=meta["h0_trainable"])
        for name, tensor, _ in params.named():
            key = f"param::{name}"
            if key not in data:
                raise DataError(f"checkpoint missing parameter {name}")
            stored = data[key]
            if stored.shape != tensor.value.shape:
                raise DataError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{stored.shape} vs {tensor.value.shape}"
                )
            tensor.value = stored.astype(np.float64)
        for key in data.files:
            if key.startswith("moment_m::"):
                name = key[len("moment_m::") :]
                params.moments[name] = (data[key], data[f"moment_v::{name}"])
    return params

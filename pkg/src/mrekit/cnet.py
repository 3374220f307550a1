"""Complex-valued dense network for normalized-wavenumber regression.

Layers are complex affine maps z = Wh + c with W = A + iB, followed by
the modSigmoid activation on every layer except the last; the real
network output is the modulus of the final complex neuron, which keeps
wavenumber estimates nonnegative. Gradients are computed with complex
(Wirtinger) calculus: for each complex quantity q = x + iy we propagate
the cogradient g_q = dL/dx + i*dL/dy, which for the affine layer gives
g_h = W^H g_z and G_W = g_z h^H (Re = dL/dA, Im = dL/dB).

Two independent nets regress k~' and k~'' in s/m from the flattened
covariance matrix of a normalized 3x3 (or 3x3x3) patch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import io as kio
from .grid import ComplexGrid, GridGeom
from .synth import SamplingConfig, build_training_batch

DEFAULT_WIDTHS = (60, 50, 40, 30, 20, 15, 10, 6, 1)

MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, which: str):
        super().__init__(f"loss became non-finite at step {step} ({which} net)")
        self.step = step


def mod_sigmoid(z, a):
    """Sigmoid(|z| + a) * exp(i*angle(z)), with angle(0) taken as 0."""
    z = np.asarray(z, dtype=np.complex128)
    m = np.abs(z)
    safe = np.where(m > 0.0, m, 1.0)
    u = np.where(m > 0.0, z / safe, 1.0 + 0.0j)
    return expit(m + a) * u


def covariance_input(patch) -> np.ndarray:
    """Flattened v v^H for v = row-major vec of the patch values."""
    values = patch.values if isinstance(patch, ComplexGrid) else np.asarray(patch)
    v = np.ascontiguousarray(values, dtype=np.complex128).reshape(-1)
    return np.outer(v, v.conj()).reshape(-1)


def covariance_input_batch(patches: np.ndarray) -> np.ndarray:
    """(n, *dims) patches -> (n, npix^2) covariance rows."""
    n = patches.shape[0]
    v = patches.reshape(n, -1)
    return (v[:, :, None] * v[:, None, :].conj()).reshape(n, -1)


def normalize_values(values: np.ndarray) -> np.ndarray:
    m = float(np.max(np.abs(values)))
    if m == 0.0:
        raise ValueError("cannot normalize an all-zero field")
    return values / m


def normalize_input(grid: ComplexGrid) -> ComplexGrid:
    """Divide by the global maximum modulus so the peak modulus is 1."""
    return ComplexGrid(normalize_values(grid.values), grid.geom)


@dataclass
class ComplexDenseNet:
    """weights[l] is (out, in) complex; act_biases has one real vector per
    hidden layer (the final affine layer has no activation)."""

    weights: list
    biases: list
    act_biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases disagree in layer count")
        if len(self.act_biases) != len(self.weights) - 1:
            raise ValueError("need one activation bias vector per hidden layer")
        for l in range(1, len(self.weights)):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l} input dim does not chain from layer {l-1}")

    @classmethod
    def initialize(cls, input_dim: int, widths, rng: np.random.Generator):
        """Glorot-scaled complex init: re/im parts N(0, 1/(fan_in+fan_out))."""
        weights, biases, act_biases = [], [], []
        fan_in = int(input_dim)
        n_layers = len(widths)
        for l, w in enumerate(widths):
            w = int(w)
            s = np.sqrt(1.0 / (fan_in + w))
            a = rng.normal(0.0, s, (w, fan_in))
            b = rng.normal(0.0, s, (w, fan_in))
            weights.append(a + 1j * b)
            biases.append(np.zeros(w, dtype=np.complex128))
            if l < n_layers - 1:
                act_biases.append(np.zeros(w, dtype=np.float64))
            fan_in = w
        return cls(weights, biases, act_biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights)

    def _check_input(self, x: np.ndarray):
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"input dimension {x.shape[-1]} does not match first layer "
                f"({self.input_dim})"
            )

    def _forward_trace(self, x: np.ndarray):
        """Returns (y, pre_activations, layer_inputs) for a (B, in) batch."""
        h = x
        zs, hs = [], []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            hs.append(h)
            z = h @ w.T + b
            zs.append(z)
            h = mod_sigmoid(z, self.act_biases[l]) if l < last else z
        y = np.abs(h[:, 0])
        return y, zs, hs

    def forward(self, x) -> np.ndarray | float:
        """Modulus of the final neuron; scalar for a single input vector."""
        x = np.asarray(x, dtype=np.complex128)
        self._check_input(x)
        single = x.ndim == 1
        y, _, _ = self._forward_trace(x[None, :] if single else x)
        return float(y[0]) if single else y

    def loss_and_grads(self, x: np.ndarray, target):
        """Mean squared error over the batch and its parameter cogradients.

        Returns (loss, grads) with grads = (gW list, gb list, ga list);
        gW/gb are complex (Re = d/dA, Im = d/dB), ga real.
        """
        x = np.asarray(x, dtype=np.complex128)
        self._check_input(x)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        t = np.atleast_1d(np.asarray(target, dtype=np.float64))
        n = xb.shape[0]
        y, zs, hs = self._forward_trace(xb)
        resid = y - t
        loss = float(np.mean(resid**2))

        # modulus readout: g_z = dL/dy * z/|z|
        z_last = zs[-1][:, 0]
        m = np.abs(z_last)
        safe = np.where(m > 0.0, m, 1.0)
        u = np.where(m > 0.0, z_last / safe, 0.0)
        g_z = ((2.0 / n) * resid * u)[:, None]

        g_weights = [None] * len(self.weights)
        g_biases = [None] * len(self.weights)
        g_act = [None] * len(self.act_biases)
        for l in range(len(self.weights) - 1, -1, -1):
            h = hs[l]
            g_weights[l] = g_z.T @ h.conj()
            g_biases[l] = g_z.sum(axis=0)
            if l == 0:
                break
            g_h = g_z @ self.weights[l].conj()
            # through modSigmoid of layer l-1
            z = zs[l - 1]
            rho = np.abs(z)
            safe = np.where(rho > 0.0, rho, 1.0)
            u = np.where(rho > 0.0, z / safe, 0.0)
            s = expit(rho + self.act_biases[l - 1])
            sp = s * (1.0 - s)
            c = np.real(g_h.conj() * u)
            g_z = (s / safe) * g_h + (sp - s / safe) * c * u
            g_act[l - 1] = (sp * c).sum(axis=0)
        return loss, (g_weights, g_biases, g_act)

    def param_list(self):
        """Real float64 views of every parameter, optimizer order."""
        out = []
        for w in self.weights:
            out.append(w.view(np.float64))
        for b in self.biases:
            out.append(b.view(np.float64))
        for a in self.act_biases:
            out.append(a)
        return out

    @staticmethod
    def grads_to_real(grads):
        g_w, g_b, g_a = grads
        out = []
        for g in g_w:
            out.append(np.ascontiguousarray(g).view(np.float64))
        for g in g_b:
            out.append(np.ascontiguousarray(g).view(np.float64))
        for g in g_a:
            out.append(np.asarray(g, dtype=np.float64))
        return out

    def copy(self) -> "ComplexDenseNet":
        return ComplexDenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [a.copy() for a in self.act_biases],
        )


@dataclass
class AdamState:
    """First/second moment accumulators matching a parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        st = cls(lr=float(lr), beta1=float(beta1), beta2=float(beta2), eps=float(eps))
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
        return st


def adam_step(params, grads, state: AdamState):
    """One in-place ADAM update with bias correction."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state lengths disagree")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    steps: int = 12000
    batch_size: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    widths: tuple[int, ...] = DEFAULT_WIDTHS

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if tuple(self.widths)[-1] != 1:
            raise ValueError("final layer width must be 1")


@dataclass
class TrainedModel:
    """Two nets (k~' and k~'') plus the acquisition context they fit."""

    net_kre: ComplexDenseNet
    net_kim: ComplexDenseNet
    omega: float
    patch_geom: GridGeom
    normalization: dict
    training_digest: str
    train_meta: dict = field(default_factory=dict)
    loss_history: np.ndarray | None = None

    def __post_init__(self):
        if self.net_kre.input_dim != self.net_kim.input_dim:
            raise ValueError("the two nets must share input dimensionality")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        expected = int(np.prod(self.patch_geom.dims)) ** 2
        if self.net_kre.input_dim != expected:
            raise ValueError(
                f"net input dim {self.net_kre.input_dim} does not match patch "
                f"{self.patch_geom.dims} (expected {expected})"
            )

    @property
    def input_dim(self) -> int:
        return self.net_kre.input_dim

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(k~', k~'') in s/m for covariance rows x."""
        return self.net_kre.forward(x), self.net_kim.forward(x)

    def save(self, path):
        write_model(path, self)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return read_model(path)


def patch_covariance_rows(patches: np.ndarray, per_patch_normalize: bool) -> np.ndarray:
    """Normalize (optionally per patch) and build covariance rows."""
    n = patches.shape[0]
    v = patches.reshape(n, -1)
    if per_patch_normalize:
        m = np.abs(v).max(axis=1)
        if np.any(m == 0.0):
            raise ValueError("cannot normalize an all-zero patch")
        v = v / m[:, None]
    return (v[:, :, None] * v[:, None, :].conj()).reshape(n, -1)


def train(omega: float, geom: GridGeom, sampling: SamplingConfig,
          config: TrainConfig) -> TrainedModel:
    """Train the two wavenumber nets on freshly generated batches.

    Each step draws one batch, normalizes every patch to unit peak
    modulus, builds covariance rows, and applies one ADAM update to each
    net against the MSE loss. Deterministic given config.seed.
    """
    if abs(omega - sampling.omega) > 1e-9 * max(omega, sampling.omega):
        raise ValueError("omega disagrees with sampling_config.omega")
    input_dim = int(np.prod(geom.dims)) ** 2
    ss = np.random.SeedSequence(config.seed)
    init_re_ss, init_im_ss, data_ss = ss.spawn(3)
    net_re = ComplexDenseNet.initialize(input_dim, config.widths,
                                        np.random.Generator(np.random.PCG64(init_re_ss)))
    net_im = ComplexDenseNet.initialize(input_dim, config.widths,
                                        np.random.Generator(np.random.PCG64(init_im_ss)))
    data_rng = np.random.Generator(np.random.PCG64(data_ss))

    params_re = net_re.param_list()
    params_im = net_im.param_list()
    st_re = AdamState.for_params(params_re, config.learning_rate, config.beta1,
                                 config.beta2, config.eps)
    st_im = AdamState.for_params(params_im, config.learning_rate, config.beta1,
                                 config.beta2, config.eps)

    history = np.empty((config.steps, 2), dtype=np.float64)
    for step in range(config.steps):
        batch = build_training_batch(sampling, geom, config.batch_size, data_rng)
        x = patch_covariance_rows(batch.patches, per_patch_normalize=True)
        loss_re, grads = net_re.loss_and_grads(x, batch.k_re)
        if not np.isfinite(loss_re):
            raise TrainingDivergedError(step, "k_re")
        adam_step(params_re, ComplexDenseNet.grads_to_real(grads), st_re)
        loss_im, grads = net_im.loss_and_grads(x, batch.k_im)
        if not np.isfinite(loss_im):
            raise TrainingDivergedError(step, "k_im")
        adam_step(params_im, ComplexDenseNet.grads_to_real(grads), st_im)
        history[step, 0] = loss_re
        history[step, 1] = loss_im

    meta = {
        "seed": int(config.seed),
        "steps": int(config.steps),
        "batch_size": int(config.batch_size),
        "learning_rate": float(config.learning_rate),
        "beta1": float(config.beta1),
        "beta2": float(config.beta2),
        "eps": float(config.eps),
        "widths": [int(w) for w in config.widths],
        "omega_rad_s": float(omega),
        "k_re_range": [float(v) for v in sampling.k_re_range],
        "k_im_range": [float(v) for v in sampling.k_im_range],
        "noise_mode": sampling.noise.mode,
        "noise_range": [float(sampling.noise.lo), float(sampling.noise.hi)],
        "ndim": int(sampling.ndim),
        "patch_dims": [int(d) for d in geom.dims],
        "spacing_mm": [float(s) for s in geom.spacing_mm],
    }
    digest = kio.config_digest(meta)
    return TrainedModel(
        net_kre=net_re,
        net_kim=net_im,
        omega=float(omega),
        patch_geom=geom,
        normalization={"scheme": "global-max-modulus"},
        training_digest=digest,
        train_meta=meta,
        loss_history=history,
    )


def _net_payload(net: ComplexDenseNet) -> list:
    chunks = []
    n_layers = len(net.weights)
    for l in range(n_layers):
        w = np.ascontiguousarray(net.weights[l])
        chunks.append(np.ascontiguousarray(w.real).reshape(-1))
        chunks.append(np.ascontiguousarray(w.imag).reshape(-1))
        chunks.append(np.ascontiguousarray(net.biases[l].real))
        chunks.append(np.ascontiguousarray(net.biases[l].imag))
        if l < n_layers - 1:
            chunks.append(np.asarray(net.act_biases[l], dtype=np.float64))
    return chunks


def write_model(path, model: TrainedModel):
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "wavenumber-model",
        "widths": [int(w) for w in model.net_kre.widths],
        "input_dim": int(model.input_dim),
        "omega_rad_s": float(model.omega),
        "frequency_hz": float(model.omega / (2.0 * np.pi)),
        "patch_dims": [int(d) for d in model.patch_geom.dims],
        "spacing_mm": [float(s) for s in model.patch_geom.spacing_mm],
        "normalization": model.normalization,
        "training_digest": model.training_digest,
        "train_meta": model.train_meta,
        "payload_order": (
            "per net (k_re then k_im), per layer: A row-major, B row-major, "
            "bias re, bias im, activation a (hidden layers only); "
            "little-endian float64"
        ),
    }
    chunks = _net_payload(model.net_kre) + _net_payload(model.net_kim)
    payload = np.concatenate(chunks).astype("<f8").tobytes()
    head = kio.canonical_json(header).encode("utf-8") + b"\n"
    kio._atomic_write_bytes(path, head + payload)


def _consume_net(flat: np.ndarray, pos: int, input_dim: int, widths):
    weights, biases, act_biases = [], [], []
    fan_in = input_dim
    n_layers = len(widths)
    for l, w in enumerate(widths):
        n = w * fan_in
        a = flat[pos:pos + n].reshape(w, fan_in); pos += n
        b = flat[pos:pos + n].reshape(w, fan_in); pos += n
        weights.append(a + 1j * b)
        br = flat[pos:pos + w]; pos += w
        bi = flat[pos:pos + w]; pos += w
        biases.append(br + 1j * bi)
        if l < n_layers - 1:
            act_biases.append(flat[pos:pos + w].copy()); pos += w
        fan_in = w
    return ComplexDenseNet(weights, biases, act_biases), pos


def read_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        head_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(head_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise kio.HeaderError(f"{path}: malformed model header: {e}") from None
    if not isinstance(header, dict) or header.get("kind") != "wavenumber-model":
        raise kio.HeaderError(f"{path}: not a wavenumber-model file")
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise kio.VersionError(
            f"{path}: model format_version {header.get('format_version')} not supported"
        )
    widths = [int(w) for w in header["widths"]]
    input_dim = int(header["input_dim"])
    per_layer = 0
    fan_in = input_dim
    for l, w in enumerate(widths):
        per_layer += 2 * w * fan_in + 2 * w + (w if l < len(widths) - 1 else 0)
        fan_in = w
    expected = 2 * per_layer * 8
    if len(payload) != expected:
        raise kio.PayloadLengthError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    net_re, pos = _consume_net(flat, 0, input_dim, widths)
    net_im, pos = _consume_net(flat, pos, input_dim, widths)
    geom = GridGeom(tuple(int(d) for d in header["patch_dims"]),
                    tuple(float(s) for s in header["spacing_mm"]))
    return TrainedModel(
        net_kre=net_re,
        net_kim=net_im,
        omega=float(header["omega_rad_s"]),
        patch_geom=geom,
        normalization=dict(header.get("normalization", {})),
        training_digest=str(header.get("training_digest", "")),
        train_meta=dict(header.get("train_meta", {})),
    )

"""The five network components and their forward semantics.

A model bundle holds parameters for the shared encoder/decoder pair, the
per-source-sample weight generator, the domain discriminator and the
response predictor. Forward passes exist twice on purpose:

* array level (``encode``, ``predict``, ...) for inference paths, and
* node level (``mlp_forward_nodes``) for the differentiable training graph.

Both route elementwise math through :mod:`adadrug.kernels`, so the two
paths produce bitwise-identical values for the same parameters.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels

OUT_ACTIVATIONS = ("none", "relu", "sigmoid")
COMPONENTS = ("encoder", "decoder", "generator", "discriminator", "predictor")


@dataclass(frozen=True)
class MlpSpec:
    """Dense network shape: layer widths plus the output activation.

    Hidden layers are always relu-activated; ``widths`` includes the input
    width, so a single affine layer is ``(n_in, n_out)``.
    """

    widths: tuple
    out_activation: str = "none"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least one layer (two widths)")
        if any(int(w) <= 0 for w in self.widths):
            raise ValueError(f"layer widths must be positive, got {self.widths}")
        if self.out_activation not in OUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.out_activation!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]


def default_specs(n_genes, latent_dim=128, encoder_hidden=256, disc_hidden=64,
                  pred_hidden=64, gen_out_activation="relu"):
    """Default component shapes for a given input gene count and latent size.

    Generator output is relu by default so the per-dimension importances are
    non-negative (sigmoid is the bounded alternative); discriminator and
    predictor end in a sigmoid probability.
    """
    d = int(latent_dim)
    return {
        "encoder": MlpSpec((n_genes, encoder_hidden, d)),
        "decoder": MlpSpec((d, encoder_hidden, n_genes)),
        "generator": MlpSpec((d, d, d), out_activation=gen_out_activation),
        "discriminator": MlpSpec((d, disc_hidden, 1), out_activation="sigmoid"),
        "predictor": MlpSpec((d, pred_hidden, 1), out_activation="sigmoid"),
    }


@dataclass
class ModelBundle:
    """Parameter arrays for all five components, plus the shared dims.

    ``params[name]`` is ``[W0, b0, W1, b1, ...]`` with weights shaped
    (fan_in, fan_out) and biases (1, fan_out). The bundle is treated as
    immutable during forward passes; only the optimizer mutates it.
    """

    specs: dict
    params: dict
    n_genes: int
    latent_dim: int
    seed: int = 0

    def __post_init__(self):
        d = self.latent_dim
        enc, dec = self.specs["encoder"], self.specs["decoder"]
        gen = self.specs["generator"]
        if enc.n_in != self.n_genes or dec.n_out != self.n_genes:
            raise ValueError("encoder input / decoder output must equal the gene count")
        widths_at_latent = (
            enc.n_out, dec.n_in, gen.n_in, gen.n_out,
            self.specs["discriminator"].n_in, self.specs["predictor"].n_in,
        )
        if any(w != d for w in widths_at_latent):
            raise ValueError(f"component widths at the latent interface must all be {d}")

    def named_arrays(self):
        """All parameter arrays as (name, array) in declared order."""
        out = []
        for comp in COMPONENTS:
            arrs = self.params[comp]
            for i in range(0, len(arrs), 2):
                out.append((f"{comp}.{i // 2}.W", arrs[i]))
                out.append((f"{comp}.{i // 2}.b", arrs[i + 1]))
        return out

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def copy(self):
        return ModelBundle(
            specs=dict(self.specs),
            params={c: [a.copy() for a in self.params[c]] for c in COMPONENTS},
            n_genes=self.n_genes,
            latent_dim=self.latent_dim,
            seed=self.seed,
        )


def init_params(specs, seed):
    """Deterministic He-scaled uniform init: W ~ U(+-sqrt(6/fan_in)), b = 0."""
    rng = np.random.default_rng(seed)
    params = {}
    for comp in COMPONENTS:
        spec = specs[comp]
        arrs = []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            lim = np.sqrt(6.0 / fan_in)
            arrs.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            arrs.append(np.zeros((1, fan_out)))
        params[comp] = arrs
    return ModelBundle(
        specs=dict(specs),
        params=params,
        n_genes=specs["encoder"].n_in,
        latent_dim=specs["encoder"].n_out,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# forward passes, array level
# ---------------------------------------------------------------------------

def _apply_out_activation(spec, a):
    if spec.out_activation == "relu":
        return kernels.relu(a)
    if spec.out_activation == "sigmoid":
        return kernels.sigmoid(a)
    return a


def mlp_forward(spec, params, x):
    n_layers = len(spec.widths) - 1
    a = x
    for i in range(n_layers):
        a = a @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            a = kernels.relu(a)
    return _apply_out_activation(spec, a)


def _check_width(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ad.ShapeError(f"{what}: expected (batch, {width}), got {x.shape}")
    return x


def encode(bundle, x):
    """Map expression rows (batch, G) to latent embeddings (batch, d)."""
    x = _check_width(x, bundle.n_genes, "encode")
    return mlp_forward(bundle.specs["encoder"], bundle.params["encoder"], x)


def decode(bundle, z):
    """Map weighted embeddings (batch, d) back to expression space (batch, G)."""
    z = _check_width(z, bundle.latent_dim, "decode")
    return mlp_forward(bundle.specs["decoder"], bundle.params["decoder"], z)


def gen_weights(bundle, h_target, h_source):
    """Per-tuple importance vectors from the embedding gap |h_T - h_S|.

    Symmetric in its two arguments by construction of the abs input.
    """
    h_target = _check_width(h_target, bundle.latent_dim, "gen_weights")
    h_source = np.asarray(h_source, dtype=np.float64)
    if h_source.shape != h_target.shape:
        raise ad.ShapeError(
            f"gen_weights: embedding shapes {h_target.shape} and {h_source.shape} differ"
        )
    gap = np.abs(h_target - h_source)
    return mlp_forward(bundle.specs["generator"], bundle.params["generator"], gap)


def apply_weights(h, w):
    """Elementwise modulation z = h * w."""
    h = np.asarray(h, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if h.shape != w.shape:
        raise ad.ShapeError(f"apply_weights: shapes {h.shape} and {w.shape} differ")
    return h * w


def mean_target_weight(w_list):
    """Elementwise mean of the per-source weight matrices.

    Accumulates in list order so the result is bitwise identical to the
    node-level computation used during training.
    """
    if len(w_list) == 0:
        raise ValueError("mean_target_weight: need at least one weight matrix")
    shape = np.asarray(w_list[0]).shape
    acc = np.asarray(w_list[0], dtype=np.float64).copy()
    for w in w_list[1:]:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != shape:
            raise ad.ShapeError(f"mean_target_weight: shapes {shape} and {w.shape} differ")
        acc = acc + w
    return acc * (1.0 / len(w_list))


def discriminate(bundle, z):
    """Domain-origin probability in (0,1) for each weighted embedding row."""
    z = _check_width(z, bundle.latent_dim, "discriminate")
    return mlp_forward(bundle.specs["discriminator"], bundle.params["discriminator"], z)


def predict(bundle, z):
    """Drug-sensitivity probability in (0,1) for each weighted embedding row."""
    z = _check_width(z, bundle.latent_dim, "predict")
    return mlp_forward(bundle.specs["predictor"], bundle.params["predictor"], z)


# ---------------------------------------------------------------------------
# forward passes, node level (training graph)
# ---------------------------------------------------------------------------

def lift_params(tape, bundle):
    """Enter every parameter array into the tape; returns nodes per component."""
    return {
        comp: [tape.leaf(a, op=f"{comp}.param") for a in bundle.params[comp]]
        for comp in COMPONENTS
    }


def mlp_forward_nodes(spec, param_nodes, x):
    n_layers = len(spec.widths) - 1
    a = x
    for i in range(n_layers):
        a = ad.add_bias(ad.matmul(a, param_nodes[2 * i]), param_nodes[2 * i + 1])
        if i < n_layers - 1:
            a = ad.relu(a)
    if spec.out_activation == "relu":
        return ad.relu(a)
    if spec.out_activation == "sigmoid":
        return ad.sigmoid(a)
    return a


def gen_weights_nodes(bundle, param_nodes, h_target, h_source):
    gap = ad.absval(ad.sub(h_target, h_source))
    return mlp_forward_nodes(bundle.specs["generator"], param_nodes["generator"], gap)


def mean_weight_nodes(w_nodes):
    acc = w_nodes[0]
    for w in w_nodes[1:]:
        acc = ad.add(acc, w)
    return ad.scale(acc, 1.0 / len(w_nodes))

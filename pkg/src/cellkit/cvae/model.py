"""Conditional VAE with a zero-inflated negative binomial decoder.

Network layout:

* condition: one embedding table per attribute (cell type, species,
  tissue), concatenated and projected linearly to ``d_c``. ``None`` in place
  of a condition tuple selects the all-zero null condition.
* encoder: two separate MLPs on ``[log1p-normalized expression, c]``; one
  yields ``(mu_z, sigma_z)``, the other ``(mu_l, sigma_l)`` for log library
  size. Scales pass through softplus.
* decoder: ``f1`` maps ``[log l, c]`` to a log-library offset
  (``log l' = log l + f1``); ``f2``/``f4`` share a trunk on ``[z_s, c]`` and
  differ only in their last linear layer, giving softmax ``rho`` and
  logistic ``tau``; ``theta = softplus(g)`` per gene.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ShapeError, UnknownConditionError, ValidationError
from ..numkit import tensor as T
from ..numkit.nn import MlpSpec, ParamStore, init_mlp, mlp_forward
from ..numkit.rng import RngStream
from .distributions import ZinbParams, kl_gaussian_t, zinb_log_pmf_t

CONDITION_FIELDS = ("cell_type", "species", "tissue")


@dataclass(frozen=True)
class CvaeArch:
    n_genes: int
    d_z: int = 256
    d_c: int = 256
    hidden: tuple = (128,)
    embed_dim: int = 16
    activation: str = "softplus"

    def to_dict(self) -> dict:
        return {"n_genes": self.n_genes, "d_z": self.d_z, "d_c": self.d_c,
                "hidden": list(self.hidden), "embed_dim": self.embed_dim, "activation": self.activation}

    @classmethod
    def from_dict(cls, d) -> "CvaeArch":
        return cls(d["n_genes"], d["d_z"], d["d_c"], tuple(d["hidden"]), d["embed_dim"], d["activation"])


class ConditionEncoder:
    """Maps ``(cell_type, species, tissue)`` tuples to embedding-table rows."""

    def __init__(self, categories: dict):
        self.categories = {f: tuple(categories[f]) for f in CONDITION_FIELDS}
        self._index = {f: {c: i for i, c in enumerate(cats)} for f, cats in self.categories.items()}

    @classmethod
    def from_conditions(cls, conditions) -> "ConditionEncoder":
        cats = {f: sorted({c[i] for c in conditions if c is not None}) for i, f in enumerate(CONDITION_FIELDS)}
        return cls(cats)

    def indices(self, conditions) -> tuple:
        """Return ``(index array (n, 3), null mask (n,))``; unknown categories raise."""
        n = len(conditions)
        idx = np.zeros((n, len(CONDITION_FIELDS)), dtype=np.int64)
        null = np.zeros(n, dtype=bool)
        for r, cond in enumerate(conditions):
            if cond is None:
                null[r] = True
                continue
            if len(cond) != len(CONDITION_FIELDS):
                raise ValidationError(f"condition {cond!r} must have fields {CONDITION_FIELDS}")
            for j, f in enumerate(CONDITION_FIELDS):
                try:
                    idx[r, j] = self._index[f][cond[j]]
                except KeyError:
                    raise UnknownConditionError(f"unknown {f} {cond[j]!r} in condition {tuple(cond)!r}") from None
        return idx, null

    def to_dict(self) -> dict:
        return {f: list(c) for f, c in self.categories.items()}


@dataclass
class CvaeParams:
    arch: CvaeArch
    conditions: ConditionEncoder
    store: ParamStore
    prior_l_mu: float
    prior_l_var: float
    alpha: float = 1.0
    genes: tuple | None = None
    specs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.specs:
            self.specs = build_specs(self.arch)

    def copy(self) -> "CvaeParams":
        return CvaeParams(self.arch, self.conditions, self.store.copy(), self.prior_l_mu,
                          self.prior_l_var, self.alpha, self.genes, dict(self.specs))


def build_specs(arch: CvaeArch) -> dict:
    G, dz, dc, act = arch.n_genes, arch.d_z, arch.d_c, arch.activation
    hid = tuple(arch.hidden)
    n_hidden = len(hid)

    def spec(widths, last="identity"):
        return MlpSpec(widths, (act,) * (len(widths) - 2) + (last,))

    return {
        "enc_z": spec((G + dc, *hid, 2 * dz)),
        "enc_l": spec((G + dc, *hid, 2)),
        "f1": spec((1 + dc, *hid, 1)),
        "trunk": MlpSpec((dz + dc, *hid), (act,) * n_hidden) if n_hidden else None,
    }


def init_cvae(arch: CvaeArch, conditions: ConditionEncoder, prior_l_mu: float, prior_l_var: float,
              seed: int = 0, alpha: float = 1.0, genes=None, init_scale: float = 1.0) -> CvaeParams:
    if not arch.hidden:
        raise ValidationError("the CVAE needs at least one hidden layer")
    rng = RngStream(seed).spawn(0)
    store = ParamStore()
    specs = build_specs(arch)
    e = arch.embed_dim
    for f in CONDITION_FIELDS:
        n_cat = max(1, len(conditions.categories[f]))
        store.add(f"cond.emb.{f}", rng.normal((n_cat, e)) * 0.1 * init_scale)
    bound = init_scale / np.sqrt(3 * e)
    store.add("cond.W", (2 * rng.uniform((3 * e, arch.d_c)) - 1) * bound)
    store.add("cond.b", np.zeros(arch.d_c))
    for name in ("enc_z", "enc_l", "f1", "trunk"):
        init_mlp(specs[name], store, name, rng, init_scale)
    h = arch.hidden[-1]
    bound = init_scale / np.sqrt(h)
    store.add("head_rho.W", (2 * rng.uniform((h, arch.n_genes)) - 1) * bound)
    store.add("head_rho.b", np.zeros(arch.n_genes))
    store.add("head_tau.W", (2 * rng.uniform((h, arch.n_genes)) - 1) * bound)
    store.add("head_tau.b", np.full(arch.n_genes, -2.0 * init_scale))
    store.add("g", np.zeros(arch.n_genes))
    # Start the library posterior at the prior mean.
    last = specs["enc_l"].n_layers - 1
    store[f"enc_l.b{last}"].data[0] += prior_l_mu * init_scale
    return CvaeParams(arch, conditions, store, float(prior_l_mu), float(prior_l_var), float(alpha),
                      None if genes is None else tuple(genes), specs)


# -- forward pieces ------------------------------------------------------------


@dataclass
class Posterior:
    mu_z: T.Tensor
    sigma_z: T.Tensor
    mu_l: T.Tensor
    sigma_l: T.Tensor


@dataclass
class LatentSample:
    z_s: T.Tensor
    log_l: T.Tensor

    @property
    def l(self) -> np.ndarray:
        return np.exp(self.log_l.data)


@dataclass
class DecoderOutput:
    log_rho: T.Tensor
    log_lib: T.Tensor  # log l', shape (n, 1)
    theta: T.Tensor
    tau_logit: T.Tensor

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.log_rho.data)

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_lib.data + self.log_rho.data)

    @property
    def tau(self) -> np.ndarray:
        from scipy.special import expit
        return expit(self.tau_logit.data)

    def zinb(self) -> ZinbParams:
        return ZinbParams(self.mu, np.broadcast_to(self.theta.data, self.log_rho.shape).copy(), self.tau)


def condition_vector(p: CvaeParams, conditions) -> T.Tensor:
    idx, null = p.conditions.indices(conditions)
    parts = [T.take_rows(p.store[f"cond.emb.{f}"], idx[:, j]) for j, f in enumerate(CONDITION_FIELDS)]
    c = T.matmul(T.concat(parts, axis=1), p.store["cond.W"]) + p.store["cond.b"]
    if null.any():
        c = c * (~null).astype(np.float64)[:, None]
    return c


def _as_batch(x, width, what) -> T.Tensor:
    x = T.as_tensor(x)
    if x.ndim == 1:
        x = T.reshape(x, (1, -1))
    if x.shape[-1] != width:
        raise ShapeError(f"{what}: expected width {width}, got {x.shape[-1]}")
    return x


def encode(p: CvaeParams, s_input, c) -> Posterior:
    """Posterior parameters for log1p-normalized expression ``s_input`` under condition vector ``c``."""
    s_input = _as_batch(s_input, p.arch.n_genes, "expression input")
    c = _as_batch(c, p.arch.d_c, "condition vector")
    if s_input.shape[0] != c.shape[0]:
        raise ShapeError(f"{s_input.shape[0]} cells but {c.shape[0]} condition vectors")
    x = T.concat([s_input, c], axis=1)
    dz = p.arch.d_z
    hz = mlp_forward(p.specs["enc_z"], p.store, x, "enc_z")
    hl = mlp_forward(p.specs["enc_l"], p.store, x, "enc_l")
    return Posterior(
        mu_z=hz[:, :dz],
        sigma_z=T.softplus(hz[:, dz:]),
        mu_l=hl[:, 0:1],
        sigma_l=T.softplus(hl[:, 1:2]),
    )


def reparameterize(post: Posterior, noise) -> LatentSample:
    """``z_s = mu_z + sigma_z * eps_z``; ``log l = mu_l + sigma_l * eps_l``.

    ``noise`` has ``d_z + 1`` columns: the first ``d_z`` drive ``z_s``, the
    last drives the library size.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 1:
        noise = noise[None, :]
    dz = post.mu_z.shape[1]
    if noise.shape[1] != dz + 1:
        raise ShapeError(f"noise needs {dz + 1} columns, got {noise.shape[1]}")
    z = post.mu_z + post.sigma_z * noise[:, :dz]
    log_l = post.mu_l + post.sigma_l * noise[:, dz:]
    return LatentSample(z, log_l)


def decode(p: CvaeParams, latent: LatentSample, c) -> DecoderOutput:
    c = _as_batch(c, p.arch.d_c, "condition vector")
    log_l = latent.log_l
    d = mlp_forward(p.specs["f1"], p.store, T.concat([log_l, c], axis=1), "f1")
    h = mlp_forward(p.specs["trunk"], p.store, T.concat([latent.z_s, c], axis=1), "trunk")
    rho_logit = T.matmul(h, p.store["head_rho.W"]) + p.store["head_rho.b"]
    tau_logit = T.matmul(h, p.store["head_tau.W"]) + p.store["head_tau.b"]
    return DecoderOutput(
        log_rho=T.log_softmax(rho_logit, axis=1),
        log_lib=log_l + d,
        theta=T.softplus(p.store["g"]),
        tau_logit=tau_logit,
    )


def reconstruction_log_lik(out: DecoderOutput, counts) -> T.Tensor:
    """Per-cell ZINB log-likelihood, shape ``(n,)``."""
    counts = np.asarray(counts, dtype=np.float64)
    mu = T.exp(out.log_lib + out.log_rho)
    ll = zinb_log_pmf_t(counts, mu, out.theta, T.log_sigmoid(out.tau_logit), T.log_sigmoid(-out.tau_logit))
    return T.tsum(ll, axis=1)


@dataclass
class ElboTerms:
    loss: T.Tensor
    recon: float
    kl_z: float
    kl_l: float


def elbo_loss(p: CvaeParams, s_counts, s_input, conditions, alpha: float, noise,
              c: T.Tensor | None = None) -> ElboTerms:
    """Single-sample negative ELBO, averaged over the cells in the batch.

    ``loss = -log p(s | z_s, l, c) + alpha * (KL_z + KL_l)`` with a standard
    normal prior on ``z_s`` and the log-normal library prior stored in ``p``.

    Raises:
        NumericalError: the loss is not finite; the message lists each term.
    """
    if c is None:
        c = condition_vector(p, conditions)
    post = encode(p, s_input, c)
    latent = reparameterize(post, noise)
    out = decode(p, latent, c)
    recon = -reconstruction_log_lik(out, s_counts)
    kl_z = kl_gaussian_t(post.mu_z, T.square(post.sigma_z), 0.0, 1.0, axis=1)
    kl_l = kl_gaussian_t(post.mu_l, T.square(post.sigma_l), p.prior_l_mu, p.prior_l_var, axis=1)
    per_cell = recon + (kl_z + kl_l) * float(alpha) if alpha != 0 else recon
    loss = T.tmean(per_cell)
    terms = ElboTerms(loss, float(recon.data.mean()), float(kl_z.data.mean()), float(kl_l.data.mean()))
    if not np.isfinite(loss.data):
        raise NumericalError(
            f"non-finite ELBO: recon={terms.recon!r}, kl_z={terms.kl_z!r}, kl_l={terms.kl_l!r}"
        )
    return terms

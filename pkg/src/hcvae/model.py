"""Conditional VAE over stacked log-mel vectors.

The encoder sees ``[x | c]``, the decoder sees ``[z | c]``. With an empty
condition (``cond_dim == 0``) this is exactly the plain VAE. The decoder is a
unit-variance Gaussian, so its negative log-likelihood is the squared error
up to a constant; the prior on ``z`` is the standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .nn import Activation, DenseLayer, dense_backward, dense_forward, finite_diff_gradcheck, init_dense


@dataclass(frozen=True)
class VaeConfig:
    input_dim: int = 640
    hidden_dim: int = 128
    n_hidden_enc: int = 4
    n_hidden_dec: int = 4
    latent_dim: int = 8
    cond_dim: int = 0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "n_hidden_enc", "n_hidden_dec", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.cond_dim < 0:
            raise ConfigurationError("cond_dim must be >= 0")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "n_hidden_enc": self.n_hidden_enc,
            "n_hidden_dec": self.n_hidden_dec,
            "latent_dim": self.latent_dim,
            "cond_dim": self.cond_dim,
            "beta": self.beta,
        }


@dataclass
class ModelParams:
    config: VaeConfig
    encoder_layers: list
    mu_head: DenseLayer
    logvar_head: DenseLayer
    decoder_layers: list
    output_layer: DenseLayer
    # per-dimension standardisation of x, applied before the encoder and to the
    # reconstruction target; identity unless fitted on training data
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None

    def __post_init__(self):
        dtype = self.dtype
        if self.input_shift is None:
            self.input_shift = np.zeros(self.config.input_dim, dtype=dtype)
        if self.input_scale is None:
            self.input_scale = np.ones(self.config.input_dim, dtype=dtype)
        cfg = self.config
        expected = cfg.input_dim + cfg.cond_dim
        for layer in self.encoder_layers:
            if layer.in_dim != expected:
                raise DimensionError(f"encoder layer expects {layer.in_dim} inputs, wanted {expected}")
            expected = layer.out_dim
        for head in (self.mu_head, self.logvar_head):
            if head.in_dim != expected or head.out_dim != cfg.latent_dim:
                raise DimensionError("latent head shape does not match config")
        expected = cfg.latent_dim + cfg.cond_dim
        for layer in self.decoder_layers:
            if layer.in_dim != expected:
                raise DimensionError(f"decoder layer expects {layer.in_dim} inputs, wanted {expected}")
            expected = layer.out_dim
        if self.output_layer.in_dim != expected or self.output_layer.out_dim != cfg.input_dim:
            raise DimensionError("output layer shape does not match config")

    @property
    def dtype(self):
        return self.output_layer.weights.dtype

    def layers(self) -> list:
        return [
            *self.encoder_layers,
            self.mu_head,
            self.logvar_head,
            *self.decoder_layers,
            self.output_layer,
        ]

    def tensors(self) -> list:
        """Trainable arrays in a fixed order (W, b per layer)."""
        out = []
        for layer in self.layers():
            out.extend((layer.weights, layer.bias))
        return out

    def named_tensors(self) -> list:
        names = [f"encoder.{k}" for k in range(len(self.encoder_layers))]
        names += ["mu_head", "logvar_head"]
        names += [f"decoder.{k}" for k in range(len(self.decoder_layers))]
        names += ["output"]
        out = []
        for name, layer in zip(names, self.layers()):
            out.append((f"{name}.weight", layer.weights))
            out.append((f"{name}.bias", layer.bias))
        out.append(("input.shift", self.input_shift))
        out.append(("input.scale", self.input_scale))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            [l.copy() for l in self.encoder_layers],
            self.mu_head.copy(),
            self.logvar_head.copy(),
            [l.copy() for l in self.decoder_layers],
            self.output_layer.copy(),
            self.input_shift.copy(),
            self.input_scale.copy(),
        )

    def astype(self, dtype) -> "ModelParams":
        def cast(layer):
            return DenseLayer(layer.weights.astype(dtype), layer.bias.astype(dtype), layer.activation)

        return ModelParams(
            self.config,
            [cast(l) for l in self.encoder_layers],
            cast(self.mu_head),
            cast(self.logvar_head),
            [cast(l) for l in self.decoder_layers],
            cast(self.output_layer),
            self.input_shift.astype(dtype),
            self.input_scale.astype(dtype),
        )


def init_params(cfg: VaeConfig, rng, dtype=np.float32) -> ModelParams:
    relu = Activation.RELU
    enc, width = [], cfg.input_dim + cfg.cond_dim
    for _ in range(cfg.n_hidden_enc):
        enc.append(init_dense(width, cfg.hidden_dim, relu, rng, dtype))
        width = cfg.hidden_dim
    mu = init_dense(width, cfg.latent_dim, Activation.LINEAR, rng, dtype)
    logvar = init_dense(width, cfg.latent_dim, Activation.LINEAR, rng, dtype)
    dec, width = [], cfg.latent_dim + cfg.cond_dim
    for _ in range(cfg.n_hidden_dec):
        dec.append(init_dense(width, cfg.hidden_dim, relu, rng, dtype))
        width = cfg.hidden_dim
    out = init_dense(width, cfg.input_dim, Activation.LINEAR, rng, dtype)
    if cfg.cond_dim:
        # condition columns start at zero: slots reserved for labels that the
        # training data never shows stay neutral instead of injecting noise
        enc[0].weights[:, cfg.input_dim :] = 0
        dec[0].weights[:, cfg.latent_dim :] = 0
    return ModelParams(cfg, enc, mu, logvar, dec, out)


def _as_batch(a, width, name, dtype):
    a = np.asarray(a, dtype=dtype)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != width:
        raise DimensionError(f"{name} must have width {width}, got shape {a.shape}")
    return a


def _conditions(c, n, cond_dim, dtype):
    if c is None:
        c = np.zeros((n, 0), dtype=dtype)
    c = np.asarray(c, dtype=dtype)
    if c.ndim == 1:
        c = np.broadcast_to(c, (n, c.shape[0]))
    if c.shape != (n, cond_dim):
        raise DimensionError(f"condition batch must be ({n}, {cond_dim}), got {c.shape}")
    return c


def _join(a, c):
    return a if c.shape[1] == 0 else np.concatenate([a, c], axis=1)


def normalize(params: ModelParams, x) -> np.ndarray:
    x = _as_batch(x, params.config.input_dim, "x", params.dtype)
    return (x - params.input_shift) / params.input_scale


def encode(params: ModelParams, x, c=None):
    """Posterior parameters ``(mu, logvar)`` for a batch (or a single row)."""
    xn = normalize(params, x)
    c = _conditions(c, xn.shape[0], params.config.cond_dim, params.dtype)
    h = _join(xn, c)
    for layer in params.encoder_layers:
        h = dense_forward(layer, h)
    return dense_forward(params.mu_head, h), dense_forward(params.logvar_head, h)


def reparameterize(mu, logvar, eps):
    mu, logvar, eps = np.asarray(mu), np.asarray(logvar), np.asarray(eps)
    if not mu.shape == logvar.shape == eps.shape:
        raise DimensionError(f"mu {mu.shape}, logvar {logvar.shape}, eps {eps.shape} differ")
    return mu + np.exp(0.5 * logvar) * eps


def decode(params: ModelParams, z, c=None) -> np.ndarray:
    """Reconstruction in standardised feature space."""
    z = _as_batch(z, params.config.latent_dim, "z", params.dtype)
    c = _conditions(c, z.shape[0], params.config.cond_dim, params.dtype)
    h = _join(z, c)
    for layer in params.decoder_layers:
        h = dense_forward(layer, h)
    return dense_forward(params.output_layer, h)


def kl_gaussian(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    mu, logvar = np.asarray(mu), np.asarray(logvar)
    if mu.shape != logvar.shape:
        raise DimensionError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    # expm1 keeps each term non-negative under rounding
    return 0.5 * np.sum(mu * mu + (np.expm1(logvar) - logvar), axis=-1)


def _forward(params, x, c, eps):
    cfg = params.config
    xn = normalize(params, x)
    n = xn.shape[0]
    c = _conditions(c, n, cfg.cond_dim, params.dtype)
    eps = _as_batch(eps, cfg.latent_dim, "eps", params.dtype)
    if eps.shape[0] != n:
        raise DimensionError(f"eps has {eps.shape[0]} rows for a batch of {n}")

    enc_in = [_join(xn, c)]
    for layer in params.encoder_layers:
        enc_in.append(dense_forward(layer, enc_in[-1]))
    h = enc_in.pop()
    mu = dense_forward(params.mu_head, h)
    logvar = dense_forward(params.logvar_head, h)
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    dec_in = [_join(z, c)]
    for layer in params.decoder_layers:
        dec_in.append(dense_forward(layer, dec_in[-1]))
    d = dec_in.pop()
    x_hat = dense_forward(params.output_layer, d)
    return dict(xn=xn, enc_in=enc_in, h=h, mu=mu, logvar=logvar, std=std, eps=eps,
                dec_in=dec_in, d=d, x_hat=x_hat)


def _terms(f):
    diff = f["x_hat"] - f["xn"]
    recon = np.sum(diff * diff, axis=1)
    kl = kl_gaussian(f["mu"], f["logvar"])
    return diff, recon, kl


def elbo_loss(params: ModelParams, x, c, eps, beta=None):
    """Batch-mean negative conditional ELBO: ``mean(recon + beta * KL)``.

    Returns ``(loss, recon, kl)`` as Python floats (recon and kl are batch
    means as well).
    """
    loss, recon, kl = elbo_terms(params, x, c, eps, beta)
    return float(loss), float(recon), float(kl)


def elbo_terms(params: ModelParams, x, c, eps, beta=None):
    """:func:`elbo_loss` without the cast to Python floats (keeps the dtype)."""
    beta = params.config.beta if beta is None else beta
    f = _forward(params, x, c, eps)
    _, recon, kl = _terms(f)
    return np.mean(recon + beta * kl), np.mean(recon), np.mean(kl)


def elbo_loss_and_grads(params: ModelParams, x, c, eps, beta=None):
    """Like :func:`elbo_loss` plus exact gradients aligned with ``params.tensors()``."""
    beta = params.config.beta if beta is None else beta
    cfg = params.config
    f = _forward(params, x, c, eps)
    diff, recon, kl = _terms(f)
    n = diff.shape[0]
    loss = float(np.mean(recon + beta * kl))

    grads_dec = []
    g = (2.0 / n) * diff
    gw, gb, g = dense_backward(params.output_layer, f["d"], g, f["x_hat"])
    grads_out = [gw, gb]
    outputs = f["dec_in"][1:] + [f["d"]]
    for layer, inp, out in reversed(list(zip(params.decoder_layers, f["dec_in"], outputs))):
        gw, gb, g = dense_backward(layer, inp, g, out)
        grads_dec = [gw, gb] + grads_dec
    g_z = g[:, : cfg.latent_dim]

    mu, logvar, std, eps = f["mu"], f["logvar"], f["std"], f["eps"]
    g_mu = g_z + (beta / n) * mu
    g_lv = g_z * (0.5 * std * eps) + (beta / n) * 0.5 * (std * std - 1.0)
    gw_mu, gb_mu, g_h = dense_backward(params.mu_head, f["h"], g_mu)
    gw_lv, gb_lv, g_h2 = dense_backward(params.logvar_head, f["h"], g_lv)
    g = g_h + g_h2

    grads_enc = []
    outputs = f["enc_in"][1:] + [f["h"]]
    for layer, inp, out in reversed(list(zip(params.encoder_layers, f["enc_in"], outputs))):
        gw, gb, g = dense_backward(layer, inp, g, out)
        grads_enc = [gw, gb] + grads_enc

    grads = grads_enc + [gw_mu, gb_mu, gw_lv, gb_lv] + grads_dec + grads_out
    return loss, float(np.mean(recon)), float(np.mean(kl)), grads


def reconstruction_error(params: ModelParams, x, c=None):
    """Sampling-free score: squared error of ``decode(mu)`` against ``x``.

    Returns one value per row; a scalar if ``x`` is a single vector.
    """
    single = np.ndim(x) == 1
    xn = normalize(params, x)
    c = _conditions(c, xn.shape[0], params.config.cond_dim, params.dtype)
    mu, _ = encode(params, x, c)
    diff = decode(params, mu, c) - xn
    err = np.sum(diff * diff, axis=1)
    return float(err[0]) if single else err


def elbo_gradcheck(seed: int = 0, cfg: VaeConfig | None = None, batch: int = 4,
                   coords_per_tensor: int = 16, step: float = 1e-5) -> dict:
    """Check backprop of the full conditional ELBO at frozen noise.

    Returns ``{64: err, 32: err}``: the worst relative error of float64 and of
    float32 analytic gradients. Both are compared against central differences
    evaluated in extended precision on the same parameter values, since
    float32 differences would mostly measure their own cancellation.
    """
    cfg = cfg or VaeConfig(cond_dim=8)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, np.float64)
    # nonzero condition columns so every weight is exercised
    for layer in (params.encoder_layers[0], params.decoder_layers[0]):
        layer.weights[...] = rng.uniform(-0.1, 0.1, size=layer.weights.shape)
    x = rng.normal(size=(batch, cfg.input_dim))
    c = np.zeros((batch, cfg.cond_dim))
    if cfg.cond_dim:
        c[np.arange(batch), rng.integers(0, cfg.cond_dim, batch)] = 1.0
    eps = rng.normal(size=(batch, cfg.latent_dim))

    errors = {}
    for bits, dtype in ((64, np.float64), (32, np.float32)):
        p = params.astype(dtype)
        xs, cs, es = (v.astype(dtype) for v in (x, c, eps))
        analytic = elbo_loss_and_grads(p, xs, cs, es, cfg.beta)[3]
        ext = p.astype(np.longdouble)
        xe, ce, ee = (v.astype(np.longdouble) for v in (xs, cs, es))
        errors[bits] = float(finite_diff_gradcheck(
            lambda _: elbo_terms(ext, xe, ce, ee, cfg.beta)[0], ext.tensors(), step,
            analytic=analytic, coords_per_tensor=coords_per_tensor, seed=seed,
        ))
    return errors

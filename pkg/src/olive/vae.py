"""Binary-Concrete beta-VAE over 32x32 single-channel screens."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor

CHECKPOINT_MAGIC = b"OLV1"
CHECKPOINT_VERSION = 1


@dataclass
class VaeConfig:
    latent: int = 256
    beta: float = 1e-4
    prior: float = 0.5
    tau_max: float = 5.0
    tau_min: float = 0.5
    epochs: int = 100
    batch_size: int = 64
    lr: float = 3e-3
    threshold: float = 0.9
    warm_start: bool = True

    def __post_init__(self):
        if not 0 < self.prior < 1:
            raise ValueError("prior must be in (0, 1)")
        if not self.tau_max >= self.tau_min > 0:
            raise ValueError("need tau_max >= tau_min > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.latent < 1:
            raise ValueError("epochs, batch_size and latent must be positive")


def anneal_tau(t: float, tau_max: float = 5.0, tau_min: float = 0.5, epochs: int = 100) -> float:
    """Exponential temperature schedule tau_max * exp(-C t), reaching tau_min at t = epochs."""
    if not 0 <= t <= epochs:
        raise ValueError(f"epoch {t} outside [0, {epochs}]")
    decay = math.log(tau_max / tau_min) / epochs
    return tau_max * math.exp(-decay * t)


def logistic_noise(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.logistic(0.0, 1.0, size=shape)


def binconcrete_sample(logits, tau: float, noise):
    """Relaxed Bernoulli sample sigmoid((l + u) / tau); differentiable in ``logits``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if isinstance(logits, Tensor):
        return ad.sigmoid(ad.mul(ad.add(logits, noise), 1.0 / tau))
    return ad._sigmoid(np.asarray((np.asarray(logits) + noise) / tau, dtype=np.float64))


def bernoulli_kl(mu, m: float = 0.5) -> float:
    """KL(Bern(mu) || Bern(m)) summed over components."""
    mu = np.asarray(mu, dtype=np.float64)
    return float(np.sum(mu * np.log(mu / m) + (1 - mu) * np.log((1 - mu) / (1 - m))))


def _kl_from_logits(logits: Tensor, m: float) -> Tensor:
    # log mu = -softplus(-l), log(1-mu) = -softplus(l); stable for large |l|
    mu = ad.sigmoid(logits)
    log_mu = ad.neg(ad.softplus(ad.neg(logits)))
    log_1mu = ad.neg(ad.softplus(logits))
    term1 = ad.mul(mu, ad.sub(log_mu, math.log(m)))
    term2 = ad.mul(ad.sub(1.0, mu), ad.sub(log_1mu, math.log(1 - m)))
    return ad.sum(ad.add(term1, term2), axis=1)


def _bernoulli_loglik(x: np.ndarray, logits: Tensor) -> Tensor:
    """Per-sample sum of x*y - softplus(y): Bernoulli log-likelihood with logits y."""
    n = x.shape[0]
    ll = ad.sub(ad.mul(logits, x), ad.softplus(logits))
    return ad.sum(ad.reshape(ll, (n, -1)), axis=1)


class BinaryVAE:
    """conv(16,3x3,s2) -> conv(32,3x3,s2) -> dense(F) encoder, mirrored decoder."""

    def __init__(self, latent: int = 256, rng: np.random.Generator | None = None,
                 image: int = 32, channels: tuple[int, int] = (16, 32), dtype=np.float32):
        if image % 4:
            raise ValueError("image size must be divisible by 4")
        self.latent, self.image, self.channels, self.dtype = latent, image, tuple(channels), dtype
        self.reset_parameters(rng if rng is not None else np.random.default_rng(0))

    @property
    def _flat(self):
        q = self.image // 4
        return self.channels[1] * q * q

    def reset_parameters(self, rng: np.random.Generator) -> None:
        c1, c2 = self.channels
        f, flat = self.latent, self._flat

        def he(shape, fan_in):
            return Tensor((rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(self.dtype),
                          requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

        self.params = {
            "enc_conv1_w": he((c1, 1, 3, 3), 9),
            "enc_conv1_b": zeros((1, c1, 1, 1)),
            "enc_conv2_w": he((c2, c1, 3, 3), 9 * c1),
            "enc_conv2_b": zeros((1, c2, 1, 1)),
            "enc_fc_w": Tensor((rng.standard_normal((flat, f)) * math.sqrt(1.0 / flat)).astype(self.dtype),
                               requires_grad=True),
            "enc_fc_b": zeros((f,)),
            "dec_fc_w": he((f, flat), f),
            "dec_fc_b": zeros((flat,)),
            "dec_deconv1_w": he((c2, c1, 3, 3), 9 * c2 / 4),
            "dec_deconv1_b": zeros((1, c1, 1, 1)),
            "dec_deconv2_w": Tensor((rng.standard_normal((c1, 1, 3, 3)) * math.sqrt(1.0 / (9 * c1 / 4))).astype(self.dtype),
                                    requires_grad=True),
            "dec_deconv2_b": zeros((1, 1, 1, 1)),
        }

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def checksum(self) -> int:
        import zlib

        crc = 0
        for p in self.parameters():
            crc = zlib.crc32(np.ascontiguousarray(p.data).tobytes(), crc)
        return crc

    def encode_logits(self, x) -> Tensor:
        p = self.params
        n = x.shape[0]
        h = ad.relu(ad.add(ad.conv2d(x, p["enc_conv1_w"], stride=2, padding=1), p["enc_conv1_b"]))
        h = ad.relu(ad.add(ad.conv2d(h, p["enc_conv2_w"], stride=2, padding=1), p["enc_conv2_b"]))
        h = ad.reshape(h, (n, self._flat))
        return ad.add(ad.matmul(h, p["enc_fc_w"]), p["enc_fc_b"])

    def decode_logits(self, z) -> Tensor:
        p = self.params
        n = z.shape[0]
        q = self.image // 4
        h = ad.relu(ad.add(ad.matmul(z, p["dec_fc_w"]), p["dec_fc_b"]))
        h = ad.reshape(h, (n, self.channels[1], q, q))
        h = ad.relu(ad.add(ad.conv_transpose2d(h, p["dec_deconv1_w"], 2, 1, 1), p["dec_deconv1_b"]))
        return ad.add(ad.conv_transpose2d(h, p["dec_deconv2_w"], 2, 1, 1), p["dec_deconv2_b"])

    def prepare(self, screens: np.ndarray) -> np.ndarray:
        """uint8 screens (N,H,W) -> float intensities (N,1,H,W)."""
        screens = np.asarray(screens)
        if screens.ndim == 2:
            screens = screens[None]
        return (screens.astype(self.dtype) / self.dtype(255.0))[:, None]

    def encode(self, screens: np.ndarray) -> np.ndarray:
        """Encoder logits for uint8 screens, no tracing."""
        return self.encode_logits(self.prepare(screens)).data

    def bits(self, screens: np.ndarray, threshold: float = 0.9) -> np.ndarray:
        from .features import logits_to_bits

        return logits_to_bits(self.encode(screens), threshold)


def elbo_terms(model, x: np.ndarray, tau: float, beta: float, noise: np.ndarray, prior: float = 0.5):
    """Traced single-sample ELBO pieces for a float batch ``x`` of shape (N,...).

    Returns ``(loss, recon, kl)`` where ``loss`` is the batch-mean of
    ``-(recon - beta * kl)`` as a Tensor, and recon/kl are per-sample Tensors.
    """
    logits = model.encode_logits(x)
    z = binconcrete_sample(logits, tau, noise)
    recon = _bernoulli_loglik(x, model.decode_logits(z))
    kl = _kl_from_logits(logits, prior)
    per_sample = ad.neg(ad.sub(recon, ad.mul(kl, beta)))
    return ad.mean(per_sample), recon, kl


def elbo(screen: np.ndarray, model, tau: float, beta: float, rng: np.random.Generator | None = None,
         prior: float = 0.5, noise: np.ndarray | None = None):
    """Single-sample Monte-Carlo ELBO for one screen.

    Returns ``(loss, reconstruction_loglik, kl)`` with ``loss = -(recon - beta*kl)``.
    """
    x = model.prepare(screen) if np.asarray(screen).dtype == np.uint8 else np.asarray(screen)
    if noise is None:
        noise = logistic_noise(rng, (x.shape[0], model.latent))
    loss, recon, kl = elbo_terms(model, x, tau, beta, np.asarray(noise, dtype=x.dtype), prior)
    value = float(loss.data)
    if not math.isfinite(value):
        raise FloatingPointError("non-finite ELBO")
    return value, float(recon.data.sum()), float(kl.data.sum())


def scoring_noise(latent: int, seed: int) -> np.ndarray:
    return logistic_noise(np.random.default_rng(seed), (1, latent))


def score_uncertainty(screens: np.ndarray, model, tau: float, beta: float, seed: int = 0,
                      prior: float = 0.5, chunk: int = 256) -> np.ndarray:
    """VAE loss per screen with a fixed noise draw shared by all screens (higher = less known)."""
    screens = np.asarray(screens)
    if screens.ndim == 2:
        screens = screens[None]
    noise = scoring_noise(model.latent, seed).astype(model.dtype)
    out = np.empty(len(screens), dtype=np.float64)
    for start in range(0, len(screens), chunk):
        x = model.prepare(screens[start : start + chunk])
        _, recon, kl = elbo_terms(model, x, tau, beta, noise, prior)
        out[start : start + len(x)] = -(recon.data - beta * kl.data)
    return out


def train(screens: np.ndarray, model: BinaryVAE, config: VaeConfig, rng: np.random.Generator,
          epochs: int | None = None) -> list[float]:
    """Minibatch Adam on the negative beta-ELBO with tau annealed per epoch.

    Returns the mean training loss of every epoch.
    """
    screens = np.asarray(screens)
    if len(screens) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not config.warm_start:
        model.reset_parameters(rng)
    epochs = config.epochs if epochs is None else epochs
    opt = Adam(model.parameters(), lr=config.lr)
    data = model.prepare(screens)
    curve = []
    for epoch in range(epochs):
        tau = anneal_tau(epoch, config.tau_max, config.tau_min, epochs)
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            noise = logistic_noise(rng, (len(batch), model.latent)).astype(model.dtype)
            opt.zero_grad()
            with Tape() as tape:
                loss, _, _ = elbo_terms(model, batch, tau, config.beta, noise, config.prior)
            tape.backward(loss)
            opt.step()
            total += float(loss.data) * len(batch)
        mean_loss = total / len(data)
        if not math.isfinite(mean_loss):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        curve.append(mean_loss)
    return curve


# checkpoint ----------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIII")


def save_checkpoint(model: BinaryVAE, path) -> None:
    """Magic, version, architecture (latent, image, c1, c2, n_params), then float32 LE weights."""
    names = list(model.params)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.latent, model.image,
                              model.channels[0], model.channels[1], len(names)))
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name].data, dtype="<f4").tobytes())


def load_checkpoint(path) -> BinaryVAE:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, latent, image, c1, c2, count = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not an OLV1 checkpoint")
    model = BinaryVAE(latent, np.random.default_rng(0), image, (c1, c2))
    if count != len(model.params):
        raise ValueError(f"{path}: architecture mismatch")
    offset = _HEADER.size
    for tensor in model.params.values():
        size = tensor.data.size * 4
        chunk = raw[offset : offset + size]
        if len(chunk) != size:
            raise ValueError(f"{path}: truncated weights")
        tensor.data = np.frombuffer(chunk, dtype="<f4").reshape(tensor.shape).astype(np.float32)
        offset += size
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes")
    return model

"""Estimation networks: the image-to-parameters generator and two PatchGAN
discriminators at different scales.

Generator layer sequence (channel counts at width_scale 1):

    c7s1-64, d128, d256, d512, 9x R512, u256, u128, u64, c7s1-8

where ``c7s1-k`` is a 7x7 stride-1 convolution + ReLU behind reflection
padding, ``d k`` a 3x3 stride-2 convolution + instance norm + ReLU,
``R k`` a pre-activation residual block (IN - ReLU - conv, twice, reflection
padded) and ``u k`` a 3x3 stride-2 transposed convolution + instance norm +
ReLU.  The final c7s1-8's nonlinearity is replaced by the output head so the
produced maps satisfy the material invariants by construction: sigmoid for
base color / roughness / metallic, and a normalized tanh-affine vector with a
strictly positive z for the normal.

Discriminator sequence: ``cn-64, c128, c256, c512, cns1-1`` — 4x4
convolutions with LeakyReLU(0.2); all but the first and last carry instance
norm; the first four layer outputs are returned for feature matching.  Both
discriminators are identical; the second one consumes a 2x box-downsampled
copy of the same input, so its score map is half the size.

Stride-2 (and the final stride-1 4x4) convolutions use "same"-style zero
padding with the overhang on the bottom/right, which keeps output sizes at
exactly ceil(H/s): a 512 input yields 32x32 / 16x16 score maps.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

WEIGHT_INIT_STD = 0.02

# Floor added to the normal head's z channel before normalization; keeps
# z strictly positive even when the tanh saturates in float32.
NORMAL_Z_FLOOR = 1e-3

GEN_WIDTHS = (64, 128, 256, 512)
N_RES_BLOCKS = 9
DISC_WIDTHS = (64, 128, 256, 512)
DISC_INPUT_CHANNELS = 11  # 3 conditioning image + 8 parameter channels


def _scaled(width, width_scale):
    return max(1, int(round(width * width_scale)))


def _same_pads(h, w, k, stride):
    """Zero-padding (top, bottom, left, right) for ceil(H/s) output size."""
    def one(n):
        out = -(-n // stride)
        total = max((out - 1) * stride + k - n, 0)
        return total // 2, total - total // 2
    pt, pb = one(h)
    pl, pr = one(w)
    return (pt, pb, pl, pr)


class Conv:
    """2D convolution layer with optional fixed or size-adaptive padding."""

    def __init__(self, rng, c_in, c_out, kernel, stride=1, padding="same", pad_mode="zero"):
        self.stride = stride
        self.kernel = kernel
        self.padding = padding
        self.pad_mode = pad_mode
        self.w = ad.parameter(rng.normal(0.0, WEIGHT_INIT_STD, size=(c_out, c_in, kernel, kernel)))
        self.b = ad.parameter(np.zeros(c_out))

    def __call__(self, x):
        if self.padding == "same":
            pad = _same_pads(x.shape[2], x.shape[3], self.kernel, self.stride)
        else:
            pad = self.padding
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=pad, pad_mode=self.pad_mode)

    def params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class ConvTranspose:
    """3x3 stride-2 transposed convolution that exactly doubles H and W."""

    def __init__(self, rng, c_in, c_out, kernel=3):
        self.w = ad.parameter(rng.normal(0.0, WEIGHT_INIT_STD, size=(c_in, c_out, kernel, kernel)))
        self.b = ad.parameter(np.zeros(c_out))

    def __call__(self, x):
        return ad.conv2d_transpose(x, self.w, self.b, stride=2)

    def params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class InstanceNorm:
    def __init__(self, channels):
        self.gamma = ad.parameter(np.ones(channels))
        self.beta = ad.parameter(np.zeros(channels))

    def __call__(self, x):
        return ad.instance_norm(x, self.gamma, self.beta)

    def params(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class ResidualBlock:
    """Pre-activation residual block: x + conv(relu(IN(conv(relu(IN(x))))))."""

    def __init__(self, rng, channels):
        self.in1 = InstanceNorm(channels)
        self.conv1 = Conv(rng, channels, channels, 3, padding=(1, 1, 1, 1), pad_mode="reflect")
        self.in2 = InstanceNorm(channels)
        self.conv2 = Conv(rng, channels, channels, 3, padding=(1, 1, 1, 1), pad_mode="reflect")

    def __call__(self, x):
        y = self.conv1(ad.relu(self.in1(x)))
        y = self.conv2(ad.relu(self.in2(y)))
        return x + y

    def params(self, prefix):
        out = {}
        out.update(self.in1.params(f"{prefix}.in1"))
        out.update(self.conv1.params(f"{prefix}.conv1"))
        out.update(self.in2.params(f"{prefix}.in2"))
        out.update(self.conv2.params(f"{prefix}.conv2"))
        return out


class Generator:
    """Fully convolutional image -> 8-channel parameter map network."""

    def __init__(self, width_scale=1.0, seed=0):
        rng = np.random.default_rng(seed)
        self.width_scale = width_scale
        w64, w128, w256, w512 = (_scaled(c, width_scale) for c in GEN_WIDTHS)

        self.stem = Conv(rng, 3, w64, 7, padding=(3, 3, 3, 3), pad_mode="reflect")
        self.down = []
        c_prev = w64
        for c in (w128, w256, w512):
            self.down.append((Conv(rng, c_prev, c, 3, stride=2), InstanceNorm(c)))
            c_prev = c
        self.blocks = [ResidualBlock(rng, w512) for _ in range(N_RES_BLOCKS)]
        self.up = []
        for c in (w256, w128, w64):
            self.up.append((ConvTranspose(rng, c_prev, c), InstanceNorm(c)))
            c_prev = c
        self.head = Conv(rng, w64, 8, 7, padding=(3, 3, 3, 3), pad_mode="reflect")

    def __call__(self, x):
        """B x 3 x H x W LDR image -> B x 8 x H x W parameters (H, W % 8 == 0)."""
        b, c, h, w = x.shape
        if c != 3:
            raise ValueError(f"generator expects 3 input channels, got {c}")
        if h % 8 or w % 8:
            raise ValueError(f"input size {h}x{w} not divisible by 8")
        y = ad.relu(self.stem(x))
        for conv, norm in self.down:
            y = ad.relu(norm(conv(y)))
        for block in self.blocks:
            y = block(y)
        for convt, norm in self.up:
            y = ad.relu(norm(convt(y)))
        raw = self.head(y)

        base = ad.sigmoid(ad.narrow(raw, 1, 0, 3))
        t = ad.tanh(ad.narrow(raw, 1, 3, 3))
        n_xy = ad.narrow(t, 1, 0, 2)
        n_z = ad.narrow(t, 1, 2, 1) * 0.5 + (0.5 + NORMAL_Z_FLOOR)
        normal = ad.normalize_channels(ad.concat([n_xy, n_z], axis=1))
        rough = ad.sigmoid(ad.narrow(raw, 1, 6, 1))
        metal = ad.sigmoid(ad.narrow(raw, 1, 7, 1))
        return ad.concat([base, normal, rough, metal], axis=1)

    def parameters(self):
        out = {}
        out.update(self.stem.params("stem"))
        for i, (conv, norm) in enumerate(self.down, 1):
            out.update(conv.params(f"down{i}.conv"))
            out.update(norm.params(f"down{i}.norm"))
        for i, block in enumerate(self.blocks, 1):
            out.update(block.params(f"res{i}"))
        for i, (convt, norm) in enumerate(self.up, 1):
            out.update(convt.params(f"up{i}.conv"))
            out.update(norm.params(f"up{i}.norm"))
        out.update(self.head.params("head"))
        return out


class PatchDiscriminator:
    """Conditional patch discriminator returning (score map, 4 feature maps)."""

    def __init__(self, width_scale=1.0, seed=0):
        rng = np.random.default_rng(seed)
        w64, w128, w256, w512 = (_scaled(c, width_scale) for c in DISC_WIDTHS)
        self.conv1 = Conv(rng, DISC_INPUT_CHANNELS, w64, 4, stride=2)   # no norm
        self.conv2 = Conv(rng, w64, w128, 4, stride=2)
        self.norm2 = InstanceNorm(w128)
        self.conv3 = Conv(rng, w128, w256, 4, stride=2)
        self.norm3 = InstanceNorm(w256)
        self.conv4 = Conv(rng, w256, w512, 4, stride=2)
        self.norm4 = InstanceNorm(w512)
        self.conv5 = Conv(rng, w512, 1, 4, stride=1)                    # score head

    def __call__(self, x):
        if x.shape[1] != DISC_INPUT_CHANNELS:
            raise ValueError(f"discriminator expects {DISC_INPUT_CHANNELS} channels, got {x.shape[1]}")
        if x.shape[2] % 16 or x.shape[3] % 16:
            raise ValueError(f"input size {x.shape[2]}x{x.shape[3]} not divisible by 16")
        f1 = ad.leaky_relu(self.conv1(x))
        f2 = ad.leaky_relu(self.norm2(self.conv2(f1)))
        f3 = ad.leaky_relu(self.norm3(self.conv3(f2)))
        f4 = ad.leaky_relu(self.norm4(self.conv4(f3)))
        score = ad.leaky_relu(self.conv5(f4))
        return score, [f1, f2, f3, f4]

    def parameters(self):
        out = {}
        out.update(self.conv1.params("conv1"))
        out.update(self.conv2.params("conv2"))
        out.update(self.norm2.params("norm2"))
        out.update(self.conv3.params("conv3"))
        out.update(self.norm3.params("norm3"))
        out.update(self.conv4.params("conv4"))
        out.update(self.norm4.params("norm4"))
        out.update(self.conv5.params("conv5"))
        return out


def build_generator(width_scale=1.0, seed=0):
    return Generator(width_scale=width_scale, seed=seed)


def build_discriminators(width_scale=1.0, seed=0):
    """Two identical-architecture discriminators with independent weights."""
    return (PatchDiscriminator(width_scale=width_scale, seed=seed + 1),
            PatchDiscriminator(width_scale=width_scale, seed=seed + 2))


def discriminate(d1, d2, image, params):
    """Condition both discriminators on (image, params) at two scales.

    Returns ``[(score1, feats1), (score2, feats2)]``; the second entry sees
    the channel-concatenated input box-downsampled by 2.
    """
    if image.shape[2:] != params.shape[2:] or image.shape[0] != params.shape[0]:
        raise ValueError(f"image {image.shape} and params {params.shape} do not align")
    x = ad.concat([image, params], axis=1)
    out1 = d1(x)
    out2 = d2(ad.resize_half(x))
    return [out1, out2]


def save_network(path, net):
    ad.save_checkpoint(path, {k: v.data for k, v in net.parameters().items()})


def load_network(path, net):
    """Restore parameters in place; shapes must match the architecture."""
    stored = ad.load_checkpoint(path)
    params = net.parameters()
    missing = set(params) ^ set(stored)
    if missing:
        raise ValueError(f"checkpoint/architecture mismatch on keys: {sorted(missing)}")
    for name, tensor in params.items():
        arr = stored[name]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {tensor.data.shape}")
        tensor.data = arr.astype(np.float32)
    return net

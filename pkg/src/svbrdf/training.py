"""Training, inverse-rendering fits, and evaluation.

The adversarial loop alternates one discriminator update and one generator
update per step, resamples the rendering-loss views every step, honors the
four loss-term switches, and is fully deterministic given (seed, config,
manifest): two runs produce byte-identical loss CSVs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datagen import DatasetManifest
from .imageio import checkpoint_path, load_material, read_png
from .losses import (
    CSV_HEADER,
    LossReport,
    LossWeights,
    feature_matching,
    lsgan_d,
    lsgan_g,
    parameter_loss,
    rendering_loss,
    scalar,
    total_losses,
)
from .maps import SvbrdfMaps, pack_maps, split_maps, unpack_maps
from .render import (
    SceneConfig,
    log_tonemap,
    render_params,
    render_params_grad,
    sample_loss_views,
)
from .networks import build_discriminators, build_generator, discriminate, save_network

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8
MAP_KEYS = ("basecolor", "normal", "roughness", "metallic", "diffuse", "specular")

# fraction of fit_inverse steps run at full lr before the linear anneal
_FIT_HOLD_FRAC = 0.5
# lr multiplier for the normal channels during fit_inverse (see comment there)
_FIT_NORMAL_LR_SCALE = 0.1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; production-scale defaults, toy values via file/flags."""

    epochs: int = 200
    steps_per_epoch: int = 5000
    batch_size: int = 8
    lr0: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    width_scale: float = 1.0
    resolution: int = 512
    enable_r: bool = True
    enable_p: bool = True
    enable_a: bool = True
    enable_f: bool = True
    lambda_f_disc: float = 0.01
    n_render_views: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch, and batch_size must be >= 1")
        if self.lr0 <= 0.0 or not (0.0 <= self.beta1 < 1.0) or not (0.0 <= self.beta2 < 1.0):
            raise ValueError("invalid optimizer constants")
        if self.width_scale <= 0.0 or self.resolution < 16:
            raise ValueError("invalid network size")
        if not (self.enable_p or self.enable_r or self.enable_a):
            raise ValueError("at least one generator loss term must be enabled")

    @classmethod
    def from_file(cls, path, **overrides):
        """Parse a flat ``key = value`` config file; kwargs override file values."""
        values = {}
        typed = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in typed:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_config_value(typed[key], key, val)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _parse_config_value(type_name, key, val):
    base = str(type_name)
    if "bool" in base:
        low = val.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {val!r}")
    if "int" in base:
        return int(val)
    if "float" in base:
        return float(val)
    return val


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(params, grads, state, lr, beta1=0.5, beta2=0.999, eps=ADAM_EPS):
    """One bias-corrected Adam update over a dict of named arrays.

    Returns (new_params, state); ``state`` is threaded through calls and
    holds the step count and per-name moment estimates.  A non-finite
    gradient aborts with a diagnostic naming the parameter.
    """
    if state is None:
        state = {"t": 0, "m": {}, "v": {}}
    state["t"] += 1
    t = state["t"]
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    new_params = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state["m"].get(name)
        v = state["v"].get(name)
        m = beta1 * m + (1.0 - beta1) * g if m is not None else (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g if v is not None else (1.0 - beta2) * g * g
        state["m"][name] = m
        state["v"][name] = v
        step = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        new_params[name] = np.asarray(p, dtype=np.float64) - step
    return new_params, state


class Adam:
    """In-place Adam over named autodiff parameters."""

    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=ADAM_EPS):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(t.shape, dtype=np.float64) for k, t in self.params.items()}
        self.v = {k: np.zeros(t.shape, dtype=np.float64) for k, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            g = np.asarray(tensor.grad, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            step = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            tensor.data = (tensor.data.astype(np.float64) - step).astype(tensor.data.dtype)


def lr_schedule(epoch, cfg: TrainConfig):
    """Flat for the first half of training, then linear decay to 0."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    half = cfg.epochs / 2.0
    if epoch < half:
        return cfg.lr0
    return cfg.lr0 * (cfg.epochs - epoch) / half


# ---------------------------------------------------------------------------
# dataset access
# ---------------------------------------------------------------------------

class SampleStore:
    """Cached reader for dataset samples referenced by manifest records."""

    def __init__(self, root, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest
        self._inputs = {}
        self._params = {}

    def input_image(self, rel):
        """(3, H, W) float32 linear LDR image."""
        if rel not in self._inputs:
            img = read_png(self.root / rel, encoding="linear")
            self._inputs[rel] = np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32)
        return self._inputs[rel]

    def params(self, record):
        """(8, H, W) float32 packed ground-truth maps for one record."""
        key = (record["material_id"], record["aug_idx"])
        if key not in self._params:
            sample_dir = (self.root / record["maps"]["basecolor"]).parent
            self._params[key] = pack_maps(load_material(sample_dir))
        return self._params[key]

    def maps(self, record) -> SvbrdfMaps:
        return unpack_maps(self.params(record))


def sample_batch(store: SampleStore, records, rng, batch_size):
    """Uniform with-replacement batch: (inputs (B,3,H,W), params (B,8,H,W))."""
    if not records:
        raise ValueError("no records to sample from")
    idx = rng.integers(0, len(records), size=batch_size)
    inputs, params = [], []
    for i in idx:
        rec = records[int(i)]
        k = int(rng.integers(0, len(rec["inputs"])))
        inputs.append(store.input_image(rec["inputs"][k]))
        params.append(store.params(rec))
    return np.stack(inputs), np.stack(params)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    out_dir: Path
    csv_path: Path
    generator: object
    reports: list


def train(cfg: TrainConfig, manifest: DatasetManifest, root, out_dir,
          scene: SceneConfig = SceneConfig()) -> TrainResult:
    """Run the adversarial training loop; writes checkpoints and a loss CSV.

    Per step: sample a batch, run the generator, draw fresh loss views, update
    both discriminators on total_d, recompute scores, update the generator on
    total_g.  With the adversarial term disabled the discriminators are
    frozen and skipped entirely (feature matching has no source either).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = SampleStore(root, manifest)
    train_records = manifest.split_records("train")
    if not train_records:
        raise ValueError("manifest has no training records")

    weights = LossWeights(enable_r=cfg.enable_r, enable_p=cfg.enable_p,
                          enable_a=cfg.enable_a, enable_f=cfg.enable_f and cfg.enable_a,
                          lambda_f_disc=cfg.lambda_f_disc, n_render_views=cfg.n_render_views)

    generator = build_generator(cfg.width_scale, seed=cfg.seed)
    d1, d2 = build_discriminators(cfg.width_scale, seed=cfg.seed)
    save_network(checkpoint_path(out, "generator_epoch0"), generator)

    opt_g = Adam(generator.parameters(), cfg.lr0, cfg.beta1, cfg.beta2)
    d_params = {f"d1.{k}": v for k, v in d1.parameters().items()}
    d_params.update({f"d2.{k}": v for k, v in d2.parameters().items()})
    opt_d = Adam(d_params, cfg.lr0, cfg.beta1, cfg.beta2)

    rng = np.random.default_rng(cfg.seed)
    csv_path = out / "losses.csv"
    reports = []
    step = 0
    with open(csv_path, "w") as csv:
        csv.write(CSV_HEADER + "\n")
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            opt_g.lr = lr
            opt_d.lr = lr
            for _ in range(cfg.steps_per_epoch):
                inputs_np, params_np = sample_batch(store, train_records, rng, cfg.batch_size)
                x = ad.constant(inputs_np)
                real = ad.constant(params_np)
                fake = generator(x)
                views = sample_loss_views(np.random.default_rng([cfg.seed, 104729, step]),
                                          count=weights.n_render_views, cfg=scene)

                l_a_d_val, total_d_val = 0.0, 0.0
                if weights.enable_a:
                    real_sc = discriminate(d1, d2, x, real)
                    fake_sc = discriminate(d1, d2, x, fake.detach())
                    l_a_d = lsgan_d([s for s, _ in real_sc], [s for s, _ in fake_sc])
                    total_d = l_a_d
                    if weights.enable_f:
                        l_f_d = feature_matching([f for _, f in real_sc], [f for _, f in fake_sc])
                        total_d = total_d + l_f_d * weights.lambda_f_disc
                    opt_d.zero_grad()
                    total_d.backward()
                    opt_d.step()
                    l_a_d_val, total_d_val = scalar(l_a_d), scalar(total_d)

                l_p = parameter_loss(fake, real) if weights.enable_p else None
                l_r = rendering_loss(fake, params_np, views, scene) if weights.enable_r else None
                l_a_g, l_f = None, None
                if weights.enable_a:
                    fake_sc = discriminate(d1, d2, x, fake)
                    l_a_g = lsgan_g([s for s, _ in fake_sc])
                    if weights.enable_f:
                        real_sc = discriminate(d1, d2, x, real)
                        l_f = feature_matching([f for _, f in real_sc], [f for _, f in fake_sc])
                total_g, _ = total_losses(l_p, l_r, l_a_g, l_a_d_val, l_f, weights)

                opt_g.zero_grad()
                opt_d.zero_grad()  # discard discriminator grads from the G pass
                total_g.backward()
                opt_g.step()

                report = LossReport(
                    l_p=scalar(l_p) if l_p is not None else 0.0,
                    l_r=scalar(l_r) if l_r is not None else 0.0,
                    l_a_g=scalar(l_a_g) if l_a_g is not None else 0.0,
                    l_a_d=l_a_d_val,
                    l_f=scalar(l_f) if l_f is not None else 0.0,
                    total_g=scalar(total_g),
                    total_d=total_d_val)
                if not report.finite():
                    raise FloatingPointError(f"training diverged at step {step}: {report}")
                csv.write(report.csv_row(step) + "\n")
                reports.append(report)
                step += 1
            save_network(checkpoint_path(out, "generator"), generator)
            save_network(checkpoint_path(out, "disc1"), d1)
            save_network(checkpoint_path(out, "disc2"), d2)
    return TrainResult(out_dir=out, csv_path=csv_path, generator=generator, reports=reports)


# ---------------------------------------------------------------------------
# inverse-rendering fit
# ---------------------------------------------------------------------------

def fit_inverse(input_img, init: SvbrdfMaps, steps=500, lr=1e-2,
                scene: SceneConfig = SceneConfig(), gt_maps: SvbrdfMaps = None,
                n_views=10, seed=0):
    """Directly optimize per-pixel maps against a flash observation.

    ``input_img`` is the linear (pre-exposure) flash radiance the scene
    config would produce.  Loss: MAE between log(1+x) tonemapped renders of
    the current maps and the observation; when ``gt_maps`` is given, the same
    comparison over sampled light/view pairs is added (the rendering loss of
    the training objective, used here as a validation harness).  Parameters
    are projected after every step: colors/scalars to [0,1], normals
    renormalized.  Returns (maps, per-step loss history).
    """
    target = np.asarray(input_img, dtype=np.float64)
    h, w = init.resolution
    if target.shape != (h, w, 3):
        raise ValueError(f"input {target.shape} does not match maps {(h, w, 3)}")
    log_target = log_tonemap(target)

    views = []
    if gt_maps is not None:
        views = sample_loss_views(np.random.default_rng(seed), count=n_views, cfg=scene)
        gt_renders = [render_params(gt_maps.base_color.astype(np.float64),
                                    gt_maps.normal.astype(np.float64),
                                    gt_maps.roughness[..., 0].astype(np.float64),
                                    gt_maps.metallic[..., 0].astype(np.float64),
                                    light, view, scene) for light, view in views]

    base = init.base_color.astype(np.float64).copy()
    normal = init.normal.astype(np.float64).copy()
    rough = init.roughness[..., 0].astype(np.float64).copy()
    metal = init.metallic[..., 0].astype(np.float64).copy()
    state_brm = None
    state_n = None
    history = []
    flash = scene.flash_light
    cam = scene.camera_position

    for it in range(steps):
        # the MAE gradient has constant magnitude near the optimum, so a
        # fixed step keeps Adam orbiting it; hold lr while the maps travel,
        # then anneal linearly so the orbit collapses onto the optimum
        hold = _FIT_HOLD_FRAC * steps
        if it < hold:
            step_lr = lr
        else:
            step_lr = lr * max(steps - it, 1) / max(steps - hold, 1.0)
        grad = np.zeros((h, w, 8))
        img, jac = render_params_grad(base, normal, rough, metal, flash, cam, scene)
        diff = np.log1p(img) - log_target
        loss = float(np.abs(diff).mean())
        upstream = np.sign(diff) / (diff.size * (1.0 + img))
        grad += np.einsum("hwc,hwck->hwk", upstream, jac)

        if views:
            render_acc = 0.0
            for (light, view), gt_img in zip(views, gt_renders):
                img_v, jac_v = render_params_grad(base, normal, rough, metal, light, view, scene)
                diff_v = np.log1p(img_v) - np.log1p(gt_img)
                render_acc += float(np.abs(diff_v).mean()) / len(views)
                upstream_v = np.sign(diff_v) / (diff_v.size * (1.0 + img_v) * len(views))
                grad += np.einsum("hwc,hwck->hwk", upstream_v, jac_v)
            loss += render_acc
        history.append(loss)

        # under a collocated flash a tangent tilt of the normal mimics a
        # roughness change, so give the normals a smaller step than the
        # color/scalar channels to keep them from soaking up that residual
        brm = np.concatenate([base, rough[..., None], metal[..., None]], axis=-1)
        grad_brm = np.concatenate([grad[..., 0:3], grad[..., 6:8]], axis=-1)
        new_brm, state_brm = adam_step({"brm": brm}, {"brm": grad_brm}, state_brm, step_lr)
        new_n, state_n = adam_step({"n": normal}, {"n": grad[..., 3:6]}, state_n,
                                   step_lr * _FIT_NORMAL_LR_SCALE)
        base = np.clip(new_brm["brm"][..., 0:3], 0.0, 1.0)
        rough = np.clip(new_brm["brm"][..., 3], 0.0, 1.0)
        metal = np.clip(new_brm["brm"][..., 4], 0.0, 1.0)
        n = new_n["n"]
        n[..., 2] = np.maximum(n[..., 2], 1e-3)
        normal = n / np.linalg.norm(n, axis=-1, keepdims=True)

    fitted = SvbrdfMaps.sanitized(base, normal, rough[..., None], metal[..., None])
    return fitted, history


# ---------------------------------------------------------------------------
# evaluation and ablation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Held-out errors: per-map RMSE at native and half resolution."""

    native: dict
    half: dict
    parameter_loss: float
    rendering_loss: float
    n_samples: int

    def to_json(self):
        return json.dumps({"native": self.native, "half": self.half,
                           "parameter_loss": self.parameter_loss,
                           "rendering_loss": self.rendering_loss,
                           "n_samples": self.n_samples}, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(native=d["native"], half=d["half"], parameter_loss=d["parameter_loss"],
                   rendering_loss=d["rendering_loss"], n_samples=d["n_samples"])


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)))


def _angular_rmse(n1, n2):
    dots = np.clip(np.sum(n1.astype(np.float64) * n2.astype(np.float64), axis=-1), -1.0, 1.0)
    return float(np.sqrt(np.mean((np.arccos(dots) / np.pi) ** 2)))


def map_errors(fake: SvbrdfMaps, real: SvbrdfMaps):
    """Per-map RMSE dict (normals as angular RMSE, plus derived albedos)."""
    fd, rd = split_maps(fake), split_maps(real)
    return {
        "basecolor": _rmse(fake.base_color, real.base_color),
        "normal": _angular_rmse(fake.normal, real.normal),
        "roughness": _rmse(fake.roughness, real.roughness),
        "metallic": _rmse(fake.metallic, real.metallic),
        "diffuse": _rmse(fd.diffuse, rd.diffuse),
        "specular": _rmse(fd.specular, rd.specular),
    }


def predict_maps(generator, image) -> SvbrdfMaps:
    """Run the generator on one (H, W, 3) linear LDR image."""
    x = np.ascontiguousarray(np.asarray(image, dtype=np.float32).transpose(2, 0, 1))[None]
    with ad.no_grad():
        out = generator(ad.constant(x))
    return unpack_maps(out.data[0])


def evaluate(generator, manifest: DatasetManifest, root, scene: SceneConfig = SceneConfig(),
             seed=0, n_views=10, max_samples=None) -> EvalReport:
    """Held-out per-map RMSE (native and half resolution) plus the two content
    losses, averaged over test records (first input image of each)."""
    store = SampleStore(root, manifest)
    records = manifest.split_records("test")
    if max_samples is not None:
        records = records[:max_samples]
    if not records:
        raise ValueError("manifest has no test records")
    views = sample_loss_views(np.random.default_rng([seed, 331]), count=n_views, cfg=scene)

    native_acc = {k: 0.0 for k in MAP_KEYS}
    half_acc = {k: 0.0 for k in MAP_KEYS}
    p_acc, r_acc = 0.0, 0.0
    for rec in records:
        image = store.input_image(rec["inputs"][0]).transpose(1, 2, 0)
        real = store.maps(rec)
        fake = predict_maps(generator, image)
        for k, v in map_errors(fake, real).items():
            native_acc[k] += v
        for k, v in map_errors(fake.resized_half(), real.resized_half()).items():
            half_acc[k] += v
        fake_t = ad.constant(pack_maps(fake)[None])
        real_t = ad.constant(pack_maps(real)[None])
        p_acc += scalar(parameter_loss(fake_t, real_t))
        r_acc += scalar(rendering_loss(fake_t, real_t.data, views, scene))
    n = len(records)
    return EvalReport(native={k: v / n for k, v in native_acc.items()},
                      half={k: v / n for k, v in half_acc.items()},
                      parameter_loss=p_acc / n, rendering_loss=r_acc / n, n_samples=n)


ABLATIONS = ("no_r", "no_p", "no_a", "no_f")
_ABLATION_FLAG = {"no_r": "enable_r", "no_p": "enable_p", "no_a": "enable_a", "no_f": "enable_f"}
# the loss each ablated term should hurt: the rendering term is judged by the
# held-out rendering loss, everything else by the held-out parameter loss
_ABLATION_TARGET = {"no_r": "rendering_loss", "no_p": "parameter_loss",
                    "no_a": "parameter_loss", "no_f": "parameter_loss"}


@dataclass
class AblationReport:
    """Percent-worse-than-baseline grids from single-term-ablated retrainings."""

    grid: dict          # map name -> {ablation -> percent worse}
    corresponding: dict  # ablation -> percent worse on its target loss
    reports: dict        # run name -> EvalReport

    def table(self):
        names = ("basecolor", "normal", "roughness", "metallic")
        lines = ["map        " + "".join(f"{a:>10}" for a in ABLATIONS)]
        for m in names:
            lines.append(f"{m:<11}" + "".join(f"{self.grid[m][a]:>+9.1f}%" for a in ABLATIONS))
        return "\n".join(lines)

    def to_json(self):
        return json.dumps({"grid": self.grid, "corresponding": self.corresponding,
                           "reports": {k: json.loads(v.to_json()) for k, v in self.reports.items()}},
                          sort_keys=True, indent=2)


def run_ablation(cfg: TrainConfig, manifest: DatasetManifest, root, out_dir,
                 scene: SceneConfig = SceneConfig()) -> AblationReport:
    """Retrain with each loss term disabled (common seed), compare held out.

    Emits a 4 maps x 4 ablations grid of percent-worse-than-baseline RMSE and
    a per-ablation percent change of the loss the term is responsible for.
    """
    out = Path(out_dir)
    runs = {"baseline": {}}
    runs.update({name: {_ABLATION_FLAG[name]: False} for name in ABLATIONS})
    reports = {}
    for name, overrides in runs.items():
        sub_cfg = replace(cfg, **overrides)
        result = train(sub_cfg, manifest, root, out / name, scene)
        reports[name] = evaluate(result.generator, manifest, root, scene, seed=cfg.seed)
        log.info("ablation run %s: parameter_loss=%.5f rendering_loss=%.5f", name,
                 reports[name].parameter_loss, reports[name].rendering_loss)

    def pct(abl_value, base_value):
        return (abl_value - base_value) / max(base_value, 1e-12) * 100.0

    base = reports["baseline"]
    grid = {m: {a: pct(reports[a].native[m], base.native[m]) for a in ABLATIONS}
            for m in ("basecolor", "normal", "roughness", "metallic")}
    corresponding = {a: pct(getattr(reports[a], _ABLATION_TARGET[a]),
                            getattr(base, _ABLATION_TARGET[a])) for a in ABLATIONS}
    report = AblationReport(grid=grid, corresponding=corresponding, reports=reports)
    (out / "ablation.json").write_text(report.to_json() + "\n")
    (out / "ablation.txt").write_text(report.table() + "\n")
    return report

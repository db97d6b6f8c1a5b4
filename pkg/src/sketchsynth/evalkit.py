"""Desk-scale evaluation proxies: recognition of synthesized sketches with a
small classifier, instance retrieval with a triplet-trained embedder, and
the synthetic-data augmentation experiment.

Categories are procedurally generated shapes (ellipse, rectangle, zigzag)
rather than real-world classes; that keeps the metric structure intact at a
scale that trains in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .datasets import PhotoSketchPair
from .nn import conv2d, channel_bias, conv_output_size, dense, fan_in_uniform
from .optim import AdamState, adam_step
from .raster import RasterImage, rasterize
from .strokes import StrokeSequence, absolute_strokes, from_absolute_strokes

__all__ = [
    "SHAPE_KINDS", "make_shape_sketch", "make_toy_pairs", "EvalConfig",
    "SmallCnn", "train_recognizer", "recognition_accuracy",
    "train_triplet_embedder", "embed_images", "retrieval_accuracy",
    "RankingResult", "augmentation_experiment", "chamfer_distance",
]

SHAPE_KINDS = ("ellipse", "rectangle", "zigzag")


def _shape_points(kind: str, rng, scale: float) -> np.ndarray:
    """Clean polyline for one random instance of a procedural category."""
    if kind == "ellipse":
        a = scale * rng.uniform(0.3, 0.5)
        b = scale * rng.uniform(0.2, 0.5)
        theta = np.linspace(0.0, 2.0 * math.pi, 17)
        return np.column_stack([a * np.cos(theta), b * np.sin(theta)])
    if kind == "rectangle":
        w = scale * rng.uniform(0.4, 0.9)
        h = scale * rng.uniform(0.3, 0.8)
        corners = np.array([[0, 0], [w, 0], [w, h], [0, h], [0, 0]], dtype=float)
        pts = []
        for p0, p1 in zip(corners, corners[1:]):
            for t in np.linspace(0.0, 1.0, 4, endpoint=False):
                pts.append(p0 + t * (p1 - p0))
        pts.append(corners[-1])
        return np.asarray(pts)
    if kind == "zigzag":
        n = int(rng.integers(4, 7))
        width = scale * rng.uniform(0.6, 1.0)
        height = scale * rng.uniform(0.2, 0.5)
        xs = np.linspace(0.0, width, 2 * n)
        ys = np.tile([0.0, height], n)
        return np.column_stack([xs, ys])
    raise ValueError(f"unknown shape kind {kind!r}; choose from {SHAPE_KINDS}")


def make_shape_sketch(kind: str, rng, scale: float = 100.0,
                      jitter: float = 0.02) -> StrokeSequence:
    """One procedural single-stroke shape with per-instance geometry noise."""
    pts = _shape_points(kind, rng, scale)
    pts = pts + rng.normal(scale=jitter * scale, size=pts.shape)
    return from_absolute_strokes([pts])


def make_noisy_pair(kind: str, rng, side: int, pair_id: str,
                    scale: float = 100.0, jitter: float = 0.05) -> PhotoSketchPair:
    """A photo and a sketch drawn as two independently jittered renderings of
    the same underlying instance, mimicking noisy human pairing."""
    pts = _shape_points(kind, rng, scale)
    photo_pts = pts + rng.normal(scale=jitter * scale, size=pts.shape)
    sketch_pts = pts + rng.normal(scale=jitter * scale, size=pts.shape)
    photo = rasterize(from_absolute_strokes([photo_pts]), side)
    return PhotoSketchPair(id=pair_id, photo=photo,
                           sketch=from_absolute_strokes([sketch_pts]))


def make_toy_pairs(n: int, rng, side: int = 32,
                   kinds=SHAPE_KINDS) -> tuple[list[PhotoSketchPair], list[int]]:
    """Vector-raster pairs over the procedural categories, with labels."""
    pairs, labels = [], []
    for i in range(n):
        label = int(rng.integers(0, len(kinds)))
        sketch = make_shape_sketch(kinds[label], rng)
        pairs.append(PhotoSketchPair(id=f"toy-{i:04d}",
                                     photo=rasterize(sketch, side), sketch=sketch))
        labels.append(label)
    return pairs, labels


@dataclass(frozen=True)
class EvalConfig:
    steps: int = 400
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    image_side: int = 32
    channels: tuple = (8, 16, 32)
    embed_dim: int = 64
    margin: float = 0.2
    eval_fraction: float = 0.5


@dataclass
class SmallCnn:
    """Three stride-2 conv blocks plus a linear head; shared by the
    recognition classifier and the retrieval embedder."""

    params: dict[str, Tensor]
    channels: tuple
    image_side: int
    out_dim: int
    meta: dict = field(default_factory=dict)

    def forward(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        for i in range(len(self.channels)):
            h = conv2d(h, self.params[f"conv{i + 1}/w"], stride=2, pad=1)
            h = ad.relu(channel_bias(h, self.params[f"conv{i + 1}/b"]))
        h = ad.reshape(h, (h.shape[0], -1))
        return dense(h, self.params["fc/w"], self.params["fc/b"])


def _build_small_cnn(cfg: EvalConfig, out_dim: int, rng) -> SmallCnn:
    params: dict[str, Tensor] = {}
    side, in_ch = cfg.image_side, 1
    for i, out_ch in enumerate(cfg.channels, start=1):
        params[f"conv{i}/w"] = Tensor(fan_in_uniform((out_ch, in_ch, 3, 3), rng),
                                      requires_grad=True)
        params[f"conv{i}/b"] = Tensor(np.zeros(out_ch), requires_grad=True)
        side = conv_output_size(side, 3, 2, 1)
        in_ch = out_ch
    flat = in_ch * side * side
    params["fc/w"] = Tensor(fan_in_uniform((flat, out_dim), rng, fan_in=flat),
                            requires_grad=True)
    params["fc/b"] = Tensor(np.zeros(out_dim), requires_grad=True)
    return SmallCnn(params, cfg.channels, cfg.image_side, out_dim)


def _image_batch(images, side: int) -> np.ndarray:
    arrs = []
    for img in images:
        if isinstance(img, RasterImage):
            if img.height != side or img.width != side:
                raise ValueError(f"image is {img.height}x{img.width}, expected {side}x{side}")
            arrs.append(img.to_chw())
        else:
            arrs.append(np.asarray(img, dtype=np.float64))
    return np.stack(arrs)


def train_recognizer(rasters: list[RasterImage], labels, cfg: EvalConfig) -> SmallCnn:
    """Cross-entropy train a small CNN over >= 2 categories."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(rasters) != len(labels):
        raise ValueError(f"{len(rasters)} images vs {len(labels)} labels")
    classes = int(labels.max()) + 1 if labels.size else 0
    if len(set(labels.tolist())) < 2:
        raise ValueError("training a recognizer requires at least 2 classes")
    rng = np.random.default_rng(cfg.seed)
    net = _build_small_cnn(cfg, classes, rng)
    net.meta["classes"] = classes
    opt = AdamState.for_params(net.params, lr=cfg.lr)
    x_all = _image_batch(rasters, cfg.image_side)
    onehot = np.eye(classes)[labels]
    for _ in range(cfg.steps):
        idx = rng.integers(0, len(rasters), size=min(cfg.batch_size, len(rasters)))
        logits = net.forward(x_all[idx])
        ce = ad.sub(ad.logsumexp(logits, axis=-1),
                    ad.sum_(ad.mul(logits, Tensor(onehot[idx])), axis=1))
        loss = ad.mean(ce)
        for p in net.params.values():
            p.grad = None
        backward(loss)
        adam_step(net.params, None, opt)
    return net


def recognition_accuracy(sketches: list[StrokeSequence], labels,
                         classifier: SmallCnn, ks=(1,)) -> dict[int, float]:
    """Rasterize, classify, and report top-k accuracy for each k."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(sketches) != len(labels):
        raise ValueError(f"{len(sketches)} sketches vs {len(labels)} labels")
    images = [rasterize(s, classifier.image_side) for s in sketches]
    with no_grad():
        logits = classifier.forward(_image_batch(images, classifier.image_side)).data
    order = np.argsort(-logits, axis=1, kind="stable")
    out = {}
    for k in ks:
        hits = sum(int(labels[i] in order[i, :k]) for i in range(len(labels)))
        out[int(k)] = hits / len(labels)
    return out


def train_triplet_embedder(pairs: list[PhotoSketchPair], cfg: EvalConfig,
                           net: SmallCnn | None = None,
                           rng=None) -> SmallCnn:
    """Triplet-train a shared-weight embedder: anchor is a rasterized
    sketch, positive its own photo, negative a random other photo."""
    if len(pairs) < 2:
        raise ValueError("triplet training requires at least 2 pairs (no negatives otherwise)")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = _build_small_cnn(cfg, cfg.embed_dim, rng)
    opt = AdamState.for_params(net.params, lr=cfg.lr)
    anchors = _image_batch([rasterize(p.sketch, cfg.image_side) for p in pairs],
                           cfg.image_side)
    photos = _image_batch([p.photo for p in pairs], cfg.image_side)
    n = len(pairs)
    for _ in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        neg = (idx + 1 + rng.integers(0, n - 1, size=idx.size)) % n
        emb = net.forward(np.concatenate([anchors[idx], photos[idx], photos[neg]]))
        ea, ep, en = ad.split(emb, [idx.size, idx.size, idx.size], axis=0)
        loss = ad.mean(triplet_hinge(ea, ep, en, cfg.margin))
        for p in net.params.values():
            p.grad = None
        backward(loss)
        adam_step(net.params, None, opt)
    return net


def triplet_hinge(anchor, positive, negative, margin: float) -> Tensor:
    """Per-row max(0, d(a,p) - d(a,n) + margin) with Euclidean distances."""
    d_ap = _row_distance(anchor, positive)
    d_an = _row_distance(anchor, negative)
    return ad.relu(ad.add(ad.sub(d_ap, d_an), margin))


def _row_distance(a, b) -> Tensor:
    diff = ad.sub(a, b)
    return ad.sqrt(ad.add(ad.sum_(ad.mul(diff, diff), axis=1), 1e-12))


def embed_images(images, embedder: SmallCnn) -> np.ndarray:
    with no_grad():
        return embedder.forward(_image_batch(images, embedder.image_side)).data.copy()


@dataclass
class RankingResult:
    """Per-query ranked gallery ids plus accuracy at the requested ranks."""

    rankings: list[list[str]]
    acc_at: dict[int, float]


def retrieval_accuracy(queries: list[StrokeSequence], gallery: list[RasterImage],
                       ground_truth: list[str], embedder: SmallCnn,
                       ks=(1, 10), gallery_ids: list[str] | None = None) -> RankingResult:
    """Rank the gallery by embedding distance for each query sketch.

    Ties break toward the lower gallery index.  acc@len(gallery) is always 1
    and is included in the result.
    """
    if gallery_ids is None:
        gallery_ids = [str(i) for i in range(len(gallery))]
    if len(ground_truth) != len(queries):
        raise ValueError(f"{len(queries)} queries vs {len(ground_truth)} ground-truth ids")
    missing = set(ground_truth) - set(gallery_ids)
    if missing:
        raise ValueError(f"ground-truth ids missing from gallery: {sorted(missing)}")
    query_emb = embed_images([rasterize(q, embedder.image_side) for q in queries], embedder)
    gallery_emb = embed_images(gallery, embedder)
    rankings = []
    for qe in query_emb:
        d = np.linalg.norm(gallery_emb - qe[None, :], axis=1)
        order = np.argsort(d, kind="stable")
        rankings.append([gallery_ids[i] for i in order])
    acc_at = {}
    for k in sorted(set(int(k) for k in ks) | {len(gallery)}):
        hits = sum(int(gt in r[:k]) for gt, r in zip(ground_truth, rankings))
        acc_at[k] = hits / len(queries)
    return RankingResult(rankings, acc_at)


def augmentation_experiment(real_pairs: list[PhotoSketchPair],
                            synthetic_pairs: list[PhotoSketchPair],
                            cfg: EvalConfig) -> dict:
    """Compare a baseline embedder against one pretrained on synthetic pairs.

    real_pairs are split (by seed) into a training and held-out portion; the
    baseline trains on the real training portion only, the augmented variant
    first trains on the synthetic pairs and then fine-tunes identically.
    Synthetic photos must not leak into the held-out evaluation set.
    """
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(real_pairs))
    n_eval = max(1, int(len(real_pairs) * cfg.eval_fraction))
    eval_idx, train_idx = order[:n_eval], order[n_eval:]
    train_real = [real_pairs[i] for i in train_idx]
    heldout = [real_pairs[i] for i in eval_idx]

    overlap = {p.id for p in synthetic_pairs} & {p.id for p in heldout}
    if overlap:
        raise ValueError(f"synthetic photos overlap the evaluation set: {sorted(overlap)}")

    def evaluate(net: SmallCnn) -> dict[int, float]:
        result = retrieval_accuracy(
            [p.sketch for p in heldout], [p.photo for p in heldout],
            [p.id for p in heldout], net, ks=(1, 10),
            gallery_ids=[p.id for p in heldout])
        return result.acc_at

    baseline = train_triplet_embedder(train_real, cfg,
                                      rng=np.random.default_rng(cfg.seed + 1))
    report_a = evaluate(baseline)

    if synthetic_pairs:
        pre_rng = np.random.default_rng(cfg.seed + 2)
        net = _build_small_cnn(cfg, cfg.embed_dim, np.random.default_rng(cfg.seed + 1))
        net = train_triplet_embedder(synthetic_pairs, cfg, net=net, rng=pre_rng)
        augmented = train_triplet_embedder(train_real, cfg, net=net,
                                           rng=np.random.default_rng(cfg.seed + 1))
    else:
        augmented = train_triplet_embedder(train_real, cfg,
                                           rng=np.random.default_rng(cfg.seed + 1))
    report_b = evaluate(augmented)
    return {"baseline": report_a, "augmented": report_b,
            "train_pairs": len(train_real), "eval_pairs": len(heldout),
            "synthetic_pairs": len(synthetic_pairs)}


def chamfer_distance(a: StrokeSequence, b: StrokeSequence) -> float:
    """Symmetric mean nearest-neighbor distance between the drawn points."""
    pa = [p for s in absolute_strokes(a) for p in s]
    pb = [p for s in absolute_strokes(b) for p in s]
    if not pa and not pb:
        return 0.0
    if not pa or not pb:
        return float("inf")
    pa, pb = np.asarray(pa), np.asarray(pb)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())

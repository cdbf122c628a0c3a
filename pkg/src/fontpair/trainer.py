"""Mini-batch Adam training with validation-based model selection, and k-fold CV."""

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import netmodel
from .errors import EmptyDataset, LeakageDetected
from .evaluator import ImageStore, decide, evaluate, predict_proba
from .pairgen import balanced_pairs, fonts_in, gen_negative

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    micro_batch: int = 16  # pairs per forward/backward call; bounds memory only
    eval_train: bool = False  # re-score the training set in eval mode each epoch
    stop_at_train_acc: float | None = None
    resample_negatives: bool = False
    max_wall_time: float | None = None  # seconds; checked at epoch ends
    log_every: int = 0  # optimizer steps between progress lines, 0 = per epoch only

    def __post_init__(self):
        if self.batch_size < 1 or self.early_stop_patience < 1 or self.micro_batch < 1:
            raise ValueError("batch_size, micro_batch and early_stop_patience must be >= 1")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_time: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_time"])
            for r in self.epochs:
                w.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.train_acc:.6f}",
                            f"{r.val_loss:.6f}", f"{r.val_acc:.6f}", f"{r.wall_time:.3f}"])


def _score(model, pairs, store, batch):
    p = predict_proba(model, pairs, store, batch)
    labels = np.array([q.label for q in pairs])
    losses = netmodel.loss(np.column_stack([1 - p, p]), labels)
    return float(np.mean(losses)), float(np.mean(decide(p) == labels))


def check_disjoint(train_pairs, other_pairs=(), forbidden_fonts=()):
    train_fonts = fonts_in(train_pairs)
    shared = train_fonts & (fonts_in(other_pairs) | set(forbidden_fonts))
    if shared:
        raise LeakageDetected(f"{len(shared)} fonts shared with held-out data, e.g. {sorted(shared)[:3]}")


def train(model_config, train_pairs, val_pairs, train_config=None, store=None,
          dataset=None, forbidden_fonts=(), metadata=None):
    """Fit a fresh model and return ``(best checkpoint, TrainLog)``.

    ``forbidden_fonts`` (e.g. the test fold) must not appear in either pair list.
    ``dataset`` is only needed for ``resample_negatives``.
    """
    cfg = train_config or TrainConfig()
    if not train_pairs or not val_pairs:
        raise EmptyDataset("train and validation pairs must be non-empty")
    check_disjoint(train_pairs, val_pairs, forbidden_fonts)
    check_disjoint(val_pairs, (), forbidden_fonts)
    store = store or ImageStore()
    train_pairs = list(train_pairs)

    model = netmodel.init_params(model_config, cfg.seed)
    model.metadata = dict(metadata or {})
    model.metadata["train_config"] = cfg.to_dict()
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainLog()
    best = model.copy()
    stale = 0
    t0 = time.time()

    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.resample_negatives and epoch > 1:
            train_pairs = _resample(train_pairs, dataset, cfg.seed + epoch)
        order = rng.permutation(len(train_pairs))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
            grads = None
            for ms in range(0, len(batch), cfg.micro_batch):
                micro = batch[ms:ms + cfg.micro_batch]
                a, b, y = store.arrays(micro)
                seed = int(rng.integers(2 ** 63))
                l, probs, g = netmodel.loss_and_grad(model, a, b, y, True, seed)
                w = len(micro) / len(batch)
                if grads is None:
                    grads = {k: v * w for k, v in g.items()}
                else:
                    for k, v in g.items():
                        grads[k] += v * w
                loss_sum += l * len(micro)
                correct += int(np.sum(decide(probs[:, netmodel.SAME]) == y))
            opt.step(model.params, grads)
            if cfg.log_every and opt.t % cfg.log_every == 0:
                seen = min(start + cfg.batch_size, len(order))
                log.info("epoch %d step %d: running loss %.4f acc %.4f (%.0fs)", epoch, opt.t,
                         loss_sum / seen, correct / seen, time.time() - t0)
        train_loss, train_acc = loss_sum / len(train_pairs), correct / len(train_pairs)
        if cfg.eval_train:
            train_loss, train_acc = _score(model, train_pairs, store, cfg.micro_batch * 2)
        val_loss, val_acc = _score(model, val_pairs, store, cfg.micro_batch * 2)
        rec = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, time.time() - t0)
        tlog.epochs.append(rec)
        log.info("epoch %d train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f (%.0fs)",
                 epoch, train_loss, train_acc, val_loss, val_acc, rec.wall_time)
        if val_acc > tlog.best_val_acc:
            tlog.best_val_acc, tlog.best_epoch = val_acc, epoch
            best = model.copy()
            best.trained_epochs = epoch
            stale = 0
        else:
            stale += 1
        if stale >= cfg.early_stop_patience:
            break
        if cfg.stop_at_train_acc is not None and train_acc >= cfg.stop_at_train_acc:
            break
        if cfg.max_wall_time is not None and rec.wall_time >= cfg.max_wall_time:
            log.info("wall-time budget reached after epoch %d", epoch)
            break
    best.metadata["best_val_acc"] = tlog.best_val_acc
    return best, tlog


def _resample(pairs, dataset, seed):
    if dataset is None:
        raise ValueError("resample_negatives needs the glyph dataset")
    pos = [p for p in pairs if p.label == 1]
    n_neg = len(pairs) - len(pos)
    fonts = sorted(fonts_in(pairs))
    return pos + list(gen_negative(fonts, n_neg, seed, dataset))


@dataclass
class CVResult:
    rounds: list  # [(checkpoint, EvalReport, TrainLog)]
    accuracies: list
    mean: float
    std: float


def run_cv(model_config, train_config, folds, dataset, k=None, pair_seed=0,
           max_train_pairs=None, max_eval_pairs=None, store=None):
    """Train once per fold with that fold held out; mean and sample std of test accuracy."""
    if not folds.folds:
        raise ValueError("manifest has no folds")
    k = k or folds.k
    store = store or ImageStore()
    rounds, accs = [], []
    for i in range(k):
        tr, va, te = folds.round(i)
        log.info("fold %d/%d: %d train, %d val, %d test fonts", i + 1, k, len(tr), len(va), len(te))
        train_pairs = balanced_pairs(tr, pair_seed, dataset, max_train_pairs)
        val_pairs = balanced_pairs(va, pair_seed + 1, dataset, max_eval_pairs)
        test_pairs = balanced_pairs(te, pair_seed + 2, dataset, max_eval_pairs)
        meta = {"fold": i, "k": k, "split_seed": folds.seed, "pair_seed": pair_seed,
                "train_font_digests": sorted(dataset.digests(tr + va))}
        ckpt, tlog = train(model_config, train_pairs, val_pairs, train_config, store,
                           dataset, forbidden_fonts=te, metadata=meta)
        report = evaluate(ckpt, test_pairs, store)
        rounds.append((ckpt, report, tlog))
        accs.append(report.accuracy)
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    return CVResult(rounds, accs, float(np.mean(accs)), std)

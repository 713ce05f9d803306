"""Training loop, split evaluation, and single-image prediction."""

import math

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, to_augment_spec, to_cnet_config
from .data import DatasetManifest, batch_iterator, load_and_resize
from .errors import ConfigInvalid, EmptyMatrix, NonFinite
from .loss import bce_loss
from .metrics import ConfusionMatrix, accumulate, compute_metrics
from .model import build_cnet, forward
from .optim import adam_init, adam_step
from .rng import stream
from .tensor import Tape, Tensor, backward


def evaluate_split(model, manifest: DatasetManifest, split, batch_size, seed=0):
    """Eval-mode pass over one split: (mean loss, accuracy, ConfusionMatrix)."""
    cm = ConfusionMatrix()
    loss_sum, n = 0.0, 0
    for images, labels in batch_iterator(manifest, split, batch_size,
                                          model.config.input_size, seed=seed):
        preds = forward(model, images, "eval")
        loss = bce_loss(None, preds, labels)
        b = images.shape[0]
        loss_sum += float(loss.data[0]) * b
        n += b
        accumulate(preds, labels, cm)
    if n == 0:
        raise EmptyMatrix(f"split {split!r} has no records")
    return loss_sum / n, (cm.tp + cm.tn) / cm.total, cm


def evaluate_groups(model, manifest: DatasetManifest, batch_size, split="test", seed=0):
    """Per-group confusion matrices over a split -> {group: MetricReport}."""
    groups = sorted({r.group for r in manifest.records if r.split == split})
    if not groups:
        raise EmptyMatrix(f"split {split!r} has no records")
    reports = {}
    for group in groups:
        sub = DatasetManifest(
            [r for r in manifest.records if r.group == group],
            manifest.class_names, seed=manifest.seed)
        _, _, cm = evaluate_split(model, sub, split, batch_size, seed=seed)
        reports[group if group else "all"] = compute_metrics(cm)
    return reports


def _save(model, state, path, class_names):
    # Re-raised as a bare OSError so the CLI maps any write failure,
    # FileNotFoundError included, to the checkpoint-IO exit code.
    try:
        save_checkpoint(model, state, path, class_names)
    except OSError as exc:
        raise OSError(f"checkpoint write failed: {exc}") from exc


def train_run(rc: RunConfig, manifest: DatasetManifest, checkpoint_out, log_out=None) -> dict:
    """Seeded end-to-end training.

    Each epoch trains on shuffled augmented batches, then scores the val
    split; the checkpoint holds the best-validation-accuracy weights (ties
    broken by lower val loss).  Without a val split the final epoch's
    weights are saved instead.  Identical (config, manifest, seed) runs
    produce bit-identical checkpoints and logs.
    """
    config = to_cnet_config(rc)
    model = build_cnet(config, rc.seed)
    state = adam_init(model.params, rc.learning_rate, rc.beta1, rc.beta2, rc.eps_hat)
    aug = to_augment_spec(rc)
    has_train = any(r.split == "train" for r in manifest.records)
    has_val = any(r.split == "val" for r in manifest.records)
    if rc.epochs > 0 and not has_train:
        raise ConfigInvalid("manifest has no train records")

    log_rows = []
    best_acc, best_loss = -1.0, math.inf
    saved = False
    for epoch in range(rc.epochs):
        loss_sum, n, step = 0.0, 0, 0
        for images, labels in batch_iterator(manifest, "train", rc.batch_size,
                                              config.input_size, aug, rc.seed, epoch):
            tape = Tape()
            rng = stream(rc.seed, "dropout", epoch, step)
            preds = forward(model, images, "train", rng, tape)
            loss = bce_loss(tape, preds, labels)
            lval = float(loss.data[0])
            if not math.isfinite(lval):
                raise NonFinite(f"loss became NaN/Inf at epoch {epoch} step {step}")
            backward(loss, tape)
            adam_step(model.params, state)
            b = images.shape[0]
            loss_sum += lval * b
            n += b
            step += 1
        train_loss = loss_sum / n

        if has_val:
            val_loss, val_acc, _ = evaluate_split(model, manifest, "val",
                                                  rc.batch_size, seed=rc.seed)
            log_rows.append((epoch, train_loss, val_loss, val_acc))
            if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
                best_acc, best_loss = val_acc, val_loss
                _save(model, state, checkpoint_out, rc.class_names)
                saved = True
        else:
            log_rows.append((epoch, train_loss, "", ""))

    if not saved:
        # epochs == 0, or no val split: persist the final weights
        _save(model, state, checkpoint_out, rc.class_names)

    if log_out is not None:
        try:
            with open(log_out, "w", encoding="utf-8") as fh:
                fh.write("epoch,train_loss,val_loss,val_accuracy\n")
                for epoch, tl, vl, va in log_rows:
                    vl = repr(vl) if vl != "" else ""
                    va = repr(va) if va != "" else ""
                    fh.write(f"{epoch},{repr(tl)},{vl},{va}\n")
        except OSError as exc:
            raise OSError(f"log write failed: {exc}") from exc

    return {
        "epochs": rc.epochs,
        "best_val_accuracy": best_acc if has_val else None,
        "checkpoint": str(checkpoint_out),
    }


def predict_image(model, image_path, class_names):
    """(class name, the two sigmoid activations) for one image file."""
    img = load_and_resize(image_path, model.config.input_size)
    preds = forward(model, Tensor(img[None]), "eval")
    row = preds.data[0]
    idx = int(np.argmax(row))  # tie falls to class 0
    names = class_names if class_names else ("0", "1")
    return names[idx], row

"""Toy training loop: Adam, lr decay, gradcheck gate, paired text ablation.

train_toy() trains the assembled model on a synthetic task with the stock
hyperparameters (lr 1e-4, weight decay 1e-5, batch 32, x0.1 decay every 5
epochs), evaluates the held-out split with the shared metrics module, and by
default repeats the run with the description embedding ablated so the report
carries both arms.
"""
from __future__ import annotations

import time

import numpy as np

from .metrics import PredictionSet, score
from .model import ModelConfig, ToyModel
from .nn import Adam, softmax_cross_entropy
from .synthetic import SyntheticSample, SyntheticTask
from .templates import ANSWER_VOCABULARY


class TrainingDivergence(RuntimeError):
    pass


def model_gradcheck(config: ModelConfig, seed: int = 0, coords_per_group: int = 2,
                    step: float = 1e-6, threshold: float = 1e-4,
                    image_size: int = 16, batch: int = 2) -> dict:
    """Finite-difference spot check of every trainable group of a fresh model.

    Runs at tiny dims; per group the relative error is
    |analytic - fd| / max(|analytic|, |fd|, 1e-8) maximized over sampled
    coordinates.
    """
    model = ToyModel(config)
    rng = np.random.default_rng(seed)
    pre = rng.random((batch, 3, image_size, image_size))
    post = rng.random((batch, 1, image_size, image_size))
    questions = ["is the area damaged?", "how much is destroyed?"][:batch]
    descriptions = ["an earthquake struck the region"] * batch
    gold = rng.integers(0, config.vocab_size, size=batch)

    def run():
        logits = model.forward(pre, post, questions, descriptions, train=True)
        return softmax_cross_entropy(logits, gold)

    loss, dlogits = run()
    model.backward(dlogits)
    report = {"groups": {}, "all_pass": True, "loss": loss}
    pick = np.random.default_rng(seed + 1)
    for name, arr, getter in model.named_params():
        g = getter().copy()
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        worst = 0.0
        for i in pick.choice(flat.size, size=min(coords_per_group, flat.size),
                             replace=False):
            orig = flat[i]
            flat[i] = orig + step
            hi, _ = run()
            flat[i] = orig - step
            lo, _ = run()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * step)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
        ok = worst <= threshold
        report["groups"][name] = {"max_rel_err": worst, "pass": ok}
        report["all_pass"] = report["all_pass"] and ok
    return report


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _stack(samples: list[SyntheticSample], idx) -> tuple:
    sel = [samples[i] for i in idx]
    pre = np.stack([s.pre for s in sel])
    post = np.stack([s.post for s in sel])
    questions = [s.item.question for s in sel]
    descriptions = [s.description for s in sel]
    gold = np.array([s.answer_index for s in sel])
    return sel, pre, post, questions, descriptions, gold


def _mean_loss(model: ToyModel, samples, batch_size: int, ablate_text: bool) -> float:
    losses = []
    for start in range(0, len(samples), batch_size):
        idx = range(start, min(start + batch_size, len(samples)))
        _, pre, post, qs, ds, gold = _stack(samples, idx)
        logits = model.forward(pre, post, qs, ds, train=True, ablate_text=ablate_text)
        loss, _ = softmax_cross_entropy(logits, gold)
        losses.append(loss * len(gold))
    return float(np.sum(losses) / len(samples))


def _evaluate(model: ToyModel, samples, batch_size: int, ablate_text: bool) -> dict:
    gold_items = [s.item for s in samples]
    entries = []
    for start in range(0, len(samples), batch_size):
        idx = range(start, min(start + batch_size, len(samples)))
        sel, pre, post, qs, ds, _ = _stack(samples, idx)
        logits = model.forward(pre, post, qs, ds, train=False, ablate_text=ablate_text)
        pred_idx = logits.argmax(axis=1)
        for s, p in zip(sel, pred_idx):
            entries.append((s.item.image_id, s.item.template_id, ANSWER_VOCABULARY[p]))
    report = score(gold_items, PredictionSet(entries))
    return {
        "overall_accuracy": report.overall_accuracy,
        "average_accuracy": report.average_accuracy,
        "macro_f1": report.macro_f1,
    }


def majority_baseline(task: SyntheticTask) -> dict:
    """Most frequent train answer applied to every held-out item."""
    tokens = [s.item.answer for s in task.train]
    values, counts = np.unique(tokens, return_counts=True)
    top = str(values[counts.argmax()])
    held = [s.item.answer for s in task.held_out]
    oa = sum(1 for a in held if a == top) / len(held)
    return {"answer": top, "train_frequency": float(counts.max() / len(tokens)),
            "held_out_accuracy": float(oa)}


def _train_single(config: ModelConfig, task: SyntheticTask, ablate_text: bool,
                  log, train_dtype=np.float32) -> dict:
    model = ToyModel(config).astype(train_dtype)
    optimizer = Adam(list(model.named_params()), lr=config.lr,
                     weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed + 1000)
    t0 = time.perf_counter()

    initial_loss = _mean_loss(model, task.train, config.batch_size, ablate_text)
    epoch_losses = []
    for epoch in range(config.epochs):
        optimizer.lr = config.lr * (config.lr_decay_factor ** (epoch // config.lr_decay_every))
        batch_losses = []
        for idx in _batches(len(task.train), config.batch_size, rng):
            _, pre, post, qs, ds, gold = _stack(task.train, idx)
            logits = model.forward(pre, post, qs, ds, train=True,
                                   ablate_text=ablate_text)
            loss, dlogits = softmax_cross_entropy(logits, gold)
            if not np.isfinite(loss):
                raise TrainingDivergence(
                    f"loss became {loss} at epoch {epoch}, ablate_text={ablate_text}")
            model.backward(dlogits)
            optimizer.step()
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))
        log(f"  epoch {epoch + 1}/{config.epochs}  mean loss {epoch_losses[-1]:.4f}")
    final_loss = _mean_loss(model, task.train, config.batch_size, ablate_text)
    eval_metrics = _evaluate(model, task.held_out, config.batch_size, ablate_text)
    return {
        "ablate_text": ablate_text,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "loss_ratio": final_loss / initial_loss,
        "epoch_losses": epoch_losses,
        "held_out": eval_metrics,
        "seconds": time.perf_counter() - t0,
    }


def train_toy(config: ModelConfig, task: SyntheticTask,
              paired_text_ablation: bool = True, gate_gradcheck: bool = True,
              verbose: bool = False, train_dtype=np.float32) -> dict:
    """Full toy-training report; raises if the gradient gate fails.

    The gradient gate always runs in float64; the training passes run in
    ``train_dtype`` (float32 by default, the supported training mode).
    """
    log = print if verbose else (lambda *_: None)
    t0 = time.perf_counter()
    report: dict = {
        "config": {k: v for k, v in config.__dict__.items()},
        "n_train": len(task.train),
        "n_held_out": len(task.held_out),
    }
    if gate_gradcheck:
        log("gradient gate at toy dims ...")
        gate = model_gradcheck(config, seed=config.seed)
        report["gradcheck_gate"] = {
            "all_pass": gate["all_pass"],
            "worst_rel_err": max(g["max_rel_err"] for g in gate["groups"].values()),
        }
        if not gate["all_pass"]:
            bad = {k: v for k, v in gate["groups"].items() if not v["pass"]}
            raise TrainingDivergence(f"gradient gate failed: {bad}")
    report["majority_baseline"] = majority_baseline(task)
    log("training (with text) ...")
    report["with_text"] = _train_single(config, task, ablate_text=False, log=log,
                                        train_dtype=train_dtype)
    if paired_text_ablation:
        log("training (text ablated) ...")
        report["text_ablated"] = _train_single(config, task, ablate_text=True, log=log,
                                               train_dtype=train_dtype)
        report["text_ablation_oa_gap"] = (
            report["with_text"]["held_out"]["overall_accuracy"]
            - report["text_ablated"]["held_out"]["overall_accuracy"])
    report["total_seconds"] = time.perf_counter() - t0
    return report

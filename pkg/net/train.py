import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from exceptions import TrainingDiverged
from net.losses import loss_for_head
from net.model import CnnModel
from net.optim import AdamW

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and schedule of a training run.

    Attributes:
        lr (float): AdamW learning rate
        weight_decay (float): Decoupled weight decay
        epochs (int): Passes over the training split
        batch_size (int): Items per optimizer step
        seed (int): Seed of the shuffling order
    """
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")

    def to_dict(self):
        return asdict(self)


def _split(dataset, which):
    if isinstance(dataset, tuple):
        return dataset
    return dataset.train() if which == 'train' else dataset.test()


def train(model: CnnModel, dataset, cfg: TrainConfig, ctx=None, after_batch=None):
    """
    Train with AdamW on the training split, evaluating the test split after every epoch.

    Args:
        model (CnnModel): Model, updated in place
        dataset: FeatureDataset, or a (train, test) pair of (x, y) tuples
        cfg (TrainConfig): Optimizer settings
        ctx: Optional hardware context used by every training forward pass
        after_batch (callable): Called with the model after every optimizer step

    Returns:
        tuple: (model, history DataFrame with epoch, train_loss, test_accuracy)

    Raises:
        TrainingDiverged: When the loss of an epoch is not finite
    """
    if isinstance(dataset, tuple):
        (x_train, y_train), (x_test, y_test) = dataset
    else:
        x_train, y_train = dataset.train()
        x_test, y_test = dataset.test()
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if np.unique(y_train).size < 2:
        raise ValueError("training split needs at least 2 classes")

    loss_fn = loss_for_head(model.arch.head)
    optimizer = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(y_train)
    history = []

    logger.info(f"Training '{model.arch.name}' on {n} items for {cfg.epochs} epochs")
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            model.zero_grad()
            logits = model.forward(x_train[idx], training=True, ctx=ctx)
            loss, grad = loss_fn(logits, y_train[idx])
            if not np.isfinite(loss):
                logger.error(f"Loss became {loss} at epoch {epoch}")
                raise TrainingDiverged(epoch)
            model.backward(grad)
            optimizer.step(model.gradients())
            if after_batch is not None:
                after_batch(model)
            total += loss * len(idx)

        if not model.is_finite():
            logger.error(f"Non-finite parameters after epoch {epoch}")
            raise TrainingDiverged(epoch)

        test_accuracy = evaluate(model, (x_test, y_test), n_classes=model.arch.n_classes)['accuracy'] \
            if len(y_test) else float('nan')
        history.append({'epoch': epoch, 'train_loss': total / n, 'test_accuracy': test_accuracy})
        message = f"epoch {epoch}/{cfg.epochs}: loss {total / n:.4f}, test accuracy {test_accuracy:.3f}"
        if epoch % 10 == 0 or epoch == cfg.epochs:
            logger.info(message)
        else:
            logger.debug(message)

    return model, pd.DataFrame(history, columns=['epoch', 'train_loss', 'test_accuracy'])


def scores(y_true, y_pred, n_classes):
    """
    Accuracy and confusion matrix of predicted labels.

    Returns:
        dict: accuracy, confusion (rows true class, columns predicted), n
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    confusion = confusion_matrix(y_true, y_pred, labels=np.arange(n_classes))
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion) / total) if total else float('nan')
    return {'accuracy': accuracy, 'confusion': confusion, 'n': total}


def evaluate(model: CnnModel, dataset, split='test', n_classes=None, batch_size=256):
    """
    Argmax accuracy and confusion matrix on one split.

    Args:
        model (CnnModel): Trained model
        dataset: FeatureDataset, or an (x, y) tuple
        split (str): 'train' or 'test' when a FeatureDataset is given
        n_classes (int, optional): Size of the confusion matrix

    Returns:
        dict: accuracy, confusion, n
    """
    x, y = _split(dataset, split)
    n_classes = n_classes or model.arch.n_classes
    if len(y) == 0:
        return scores([], [], n_classes)
    return scores(y, model.predict(x, batch_size=batch_size), n_classes)

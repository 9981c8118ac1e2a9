"""
Evaluation of a trained predictor on a dataset.

The patch model is evaluated with a fully computed Z-block (every patch runs
through theta1); no sampling happens at evaluation time.
"""

import numpy as np
from tqdm import tqdm

from autograd.tensor import no_grad
from metrics.report import SEG_THRESHOLD, classification_report, segmentation_report
from utils.config import CLASSIFICATION
from utils.logger import setup_logger

logger = setup_logger(__name__)

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))

def predict(model, dataset, batch_size: int = 4, chunk_size: int = 4, threads: int = 1,
            progress: bool = False) -> np.ndarray:
    """
    Predictions over the dataset in its stored order.

    Returns:
        class ids [count] for classification, foreground probabilities
        [count,1,M,N] for segmentation
    """
    outputs = []
    with no_grad():
        for indices in tqdm(list(dataset.batches(batch_size)), desc="eval", leave=False, disable=not progress):
            logits = model.predict_logits(dataset.images[indices], chunk_size, threads)
            if dataset.task == CLASSIFICATION:
                outputs.append(np.argmax(logits, axis=1))
            else:
                outputs.append(_sigmoid(logits.astype(np.float64)))
    return np.concatenate(outputs)

def evaluate(model, dataset, batch_size: int = 4, chunk_size: int = 4, threads: int = 1,
             threshold: float = SEG_THRESHOLD, progress: bool = False,
             return_predictions: bool = False):
    """
    MetricsReport of `model` on `dataset`; deterministic for fixed parameters.

    With return_predictions the raw predictions are returned alongside the
    report so callers can dump them.
    """
    predictions = predict(model, dataset, batch_size, chunk_size, threads, progress)
    if dataset.task == CLASSIFICATION:
        result = classification_report(predictions, dataset.labels, dataset.num_classes)
    else:
        result = segmentation_report(predictions, dataset.masks, threshold)
    logger.info(f"Evaluated {len(dataset)} samples: acc={result.accuracy:.4f}, f1={result.f1:.4f}, "
                f"iou={result.iou:.4f}")
    if return_predictions:
        return result, predictions
    return result

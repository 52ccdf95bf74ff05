"""The four training objectives and their unweighted sum.

All losses are scalar graph nodes built from :mod:`adadrug.autodiff`
primitives. Per-domain sums are estimated per mini-batch as batch means,
so magnitudes are batch-size invariant. Ablated terms are simply omitted
from the sum (an exact zero), never replaced by scaled-down versions.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PROB_CLAMP = 1e-7


@dataclass
class LossParts:
    """Scalar snapshot of one training step, total = reco + ind + adv + cls."""

    reco: float = 0.0
    ind: float = 0.0
    adv: float = 0.0
    cls: float = 0.0
    total: float = 0.0


def _scalar(node):
    return float(node.value[0, 0])


def _sq_err_mean(pred_node, target):
    """sum((pred - target)^2) / batch == batch mean of squared row norms."""
    tape = pred_node.tape
    t = tape.leaf(target, op="const")
    diff = ad.sub(pred_node, t)
    return ad.scale(ad.sum_all(ad.ewmul(diff, diff)), 1.0 / pred_node.shape[0])


def reco_loss(decoded_sources, x_sources, decoded_target=None, x_target=None):
    """Reconstruction error summed over domains.

    Each domain contributes the batch mean of its squared row-wise
    reconstruction error; the target term is skipped when the target is
    excluded from training.
    """
    if len(decoded_sources) != len(x_sources):
        raise ValueError("reco_loss: need one input matrix per decoded matrix")
    total = None
    for dec, x in zip(decoded_sources, x_sources):
        term = _sq_err_mean(dec, x)
        total = term if total is None else ad.add(total, term)
    if decoded_target is not None:
        term = _sq_err_mean(decoded_target, x_target)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("reco_loss: no domains given")
    return total


def ind_loss(w_nodes):
    """Mutual-independence penalty on the per-tuple weight vectors.

    For each tuple the K weight vectors form a K x d matrix W; the penalty
    is 0.5 * ||W W^T - I||_F^2, averaged over the batch. Computed from the
    K (batch, d) weight matrices via row-wise Gram entries, which keeps the
    graph size independent of the batch size.
    """
    k = len(w_nodes)
    if k < 1:
        raise ValueError("ind_loss: need at least one weight matrix")
    batch = w_nodes[0].shape[0]
    tape = w_nodes[0].tape
    ones = tape.leaf(np.ones((batch, 1)), op="const")
    total = None
    for a in range(k):
        for b in range(a, k):
            gram = ad.row_sum(ad.ewmul(w_nodes[a], w_nodes[b]))
            if a == b:
                dev = ad.sub(gram, ones)
                term = ad.mean_all(ad.ewmul(dev, dev))
            else:
                # off-diagonal entries appear twice in the Frobenius norm
                term = ad.scale(ad.mean_all(ad.ewmul(gram, gram)), 2.0)
            total = term if total is None else ad.add(total, term)
    return ad.scale(total, 0.5)


def _neg_log(node):
    return ad.scale(ad.sum_all(ad.log(ad.clamp(node, PROB_CLAMP, 1.0 - PROB_CLAMP))), -1.0)


def adv_loss(d_sources, d_target=None):
    """Domain-discrimination binary cross entropy.

    Source probabilities carry domain label 1, target label 0; the mean runs
    over all (K+1)*B items (K*B when no target column is given).
    Probabilities are clamped to [1e-7, 1-1e-7] before the logs. The encoder's
    opposing objective is realized by feeding grad-reversed embeddings into
    the discriminator, not inside this function.
    """
    if len(d_sources) == 0 and d_target is None:
        raise ValueError("adv_loss: no probability columns given")
    n_items = 0
    total = None
    for p in d_sources:
        n_items += p.value.size
        term = _neg_log(p)
        total = term if total is None else ad.add(total, term)
    if d_target is not None:
        n_items += d_target.value.size
        tape = d_target.tape
        ones = tape.leaf(np.ones(d_target.shape), op="const")
        term = _neg_log(ad.sub(ones, d_target))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / n_items)


def cls_loss(p_sources, y_sources):
    """Squared-error classification loss, summed over source domains."""
    if len(p_sources) != len(y_sources):
        raise ValueError("cls_loss: need one label column per probability column")
    total = None
    for p, y in zip(p_sources, y_sources):
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("cls_loss: labels must be binary")
        term = _sq_err_mean(p, y)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("cls_loss: no domains given")
    return total


def total_loss(reco=None, ind=None, adv=None, cls=None):
    """Unweighted sum of the supplied terms, in reco/ind/adv/cls order.

    Ablations pass None for removed terms, which leaves the sum bitwise
    equal to the sum of the remaining parts.
    """
    total = None
    for node in (reco, ind, adv, cls):
        if node is None:
            continue
        total = node if total is None else ad.add(total, node)
    if total is None:
        raise ValueError("total_loss: all terms are disabled")
    return total


def make_parts(reco=None, ind=None, adv=None, cls=None, total=None):
    return LossParts(
        reco=_scalar(reco) if reco is not None else 0.0,
        ind=_scalar(ind) if ind is not None else 0.0,
        adv=_scalar(adv) if adv is not None else 0.0,
        cls=_scalar(cls) if cls is not None else 0.0,
        total=_scalar(total) if total is not None else 0.0,
    )

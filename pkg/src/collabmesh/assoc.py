"""Unsupervised associative walker loss over batch embeddings.

A walker steps between batch samples with transition probabilities given by
row-softmaxed embedding similarities; the two-step round-trip matrix is
pulled toward a diagonal target with entries 1/O, where O is the number of
object classes present (the scalar count only; no labels are consumed).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def similarity_matrix(phi):
    """Gram matrix M_ij = phi_i . phi_j over batch rows."""
    phi = ad.as_tensor(phi)
    return phi @ phi.swapaxes(-1, -2)


def transition_matrix(m):
    """Row-softmax of the similarity matrix; rows sum to 1."""
    return ad.softmax(ad.as_tensor(m), axis=-1)


def round_trip_matrix(p):
    return p @ p


def associative_loss(phi_hand, phi_obj, n_classes, class_weights=None,
                     return_round_trip=False):
    """Squared Frobenius distance between the round-trip matrix and diag(1/O).

    phi_hand, phi_obj: (B, D) embeddings, concatenated per sample before the
    similarity computation.  class_weights optionally replaces the uniform
    1/O diagonal for class-imbalanced batches.
    """
    phi_hand = ad.as_tensor(phi_hand)
    phi_obj = ad.as_tensor(phi_obj)
    if phi_hand.shape != phi_obj.shape:
        raise ad.ShapeError("associative_loss", phi_hand.shape, phi_obj.shape)
    b = phi_hand.shape[0]
    if not 1 <= n_classes <= b:
        raise ValueError("class count must satisfy 1 <= O <= B, got O=%d B=%d"
                         % (n_classes, b))
    combined = ad.concat([phi_hand, phi_obj], axis=-1)
    p = transition_matrix(similarity_matrix(combined))
    p_round = round_trip_matrix(p)
    if class_weights is None:
        target = np.eye(b) / n_classes
    else:
        class_weights = np.asarray(class_weights, dtype=np.float64)
        if class_weights.shape != (b,):
            raise ValueError("class_weights must have one entry per batch row")
        target = np.diag(class_weights)
    loss = ad.frobenius_sq(Tensor(target) - p_round)
    if return_round_trip:
        return loss, p_round
    return loss

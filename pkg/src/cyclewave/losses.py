"""Training objectives: least-squares adversarial terms, cycle, identity.

Expectations are realized as means over batch elements and over score-map
or mel elements, so the loss weights keep their meaning regardless of
segment length. The L1 terms are element means for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ContractError, DimensionError

NUM_BLOCKS = 8  # 5 period + 3 scale sub-discriminators per discriminator


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    identity_active_iterations: int = 1000

    def validate(self) -> None:
        if self.lambda_cyc < 0 or self.lambda_id < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class LossReport:
    """Scalar summary of one training step.

    ``adv``, ``adv2``, ``cyc`` and ``id`` are the unweighted generator-side
    sums; ``l_g`` equals adv + lambda_cyc*cyc + lambda_id*id + adv2 and
    ``l_d`` is the discriminator total from the same iteration.
    """

    iteration: int
    l_d: float
    l_g: float
    adv: float
    adv2: float
    cyc: float
    id: float

    CSV_HEADER = "iter,L_D,L_G,adv,adv2,cyc,id"

    def csv_line(self) -> str:
        return (f"{self.iteration},{self.l_d:.10g},{self.l_g:.10g},{self.adv:.10g},"
                f"{self.adv2:.10g},{self.cyc:.10g},{self.id:.10g}")


def adv_loss_d(scores_real: tc.Tensor, scores_fake: tc.Tensor) -> tc.Tensor:
    """Least-squares discriminator term: E[(real - 1)^2] + E[fake^2]."""
    if scores_real.size == 0 or scores_fake.size == 0:
        raise ContractError("empty score maps")
    return tc.add(tc.mean(tc.square(tc.sub(scores_real, 1.0))),
                  tc.mean(tc.square(scores_fake)))


def adv_loss_g(scores_fake: tc.Tensor) -> tc.Tensor:
    """Least-squares generator term: E[(fake - 1)^2]."""
    if scores_fake.size == 0:
        raise ContractError("empty score maps")
    return tc.mean(tc.square(tc.sub(scores_fake, 1.0)))


def adv2_losses(scores_real: tc.Tensor, scores_cycled: tc.Tensor) -> tuple[tc.Tensor, tc.Tensor]:
    """Second adversarial pair on fully cycled audio: (D' term, G term)."""
    return adv_loss_d(scores_real, scores_cycled), adv_loss_g(scores_cycled)


def adv_loss_d_joint(scores: tc.Tensor, n_real: int) -> tc.Tensor:
    """adv_loss_d over one score map whose leading batch is [real; fake].

    Equals adv_loss_d(scores[:n_real], scores[n_real:]) exactly; batching the
    two discriminator passes into one halves the graph count.
    """
    total = scores.shape[0]
    if not (0 < n_real < total) or 2 * n_real != total:
        raise ContractError(f"joint scores need equal halves, got {n_real} of {total}")
    labels = np.zeros((total,) + (1,) * (scores.ndim - 1))
    labels[:n_real] = 1.0
    return tc.mean(tc.square(tc.sub(scores, tc.Tensor(labels)))) * 2.0


def _l1_mean(a: tc.Tensor, b: tc.Tensor) -> tc.Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return tc.mean(tc.absolute(tc.sub(a, b)))


def cycle_loss(mel_source: tc.Tensor, mel_reconstructed: tc.Tensor) -> tc.Tensor:
    """Mean absolute error between the source mel and its full-cycle image."""
    return _l1_mean(mel_reconstructed, mel_source)


def identity_loss(mel_target: tc.Tensor, mel_converted_target: tc.Tensor) -> tc.Tensor:
    """Mean absolute error when a generator is fed its own target domain."""
    return _l1_mean(mel_converted_target, mel_target)


def masked_cycle_step(mel: tc.Tensor, mask: tc.Tensor, forward_gen, backward_gen,
                      mel_fn) -> tuple[tc.Tensor, tc.Tensor, tc.Tensor]:
    """One masked conversion cycle.

    The forward generator consumes the masked mel plus the mask; the backward
    generator reconstructs from the converted audio's mel under an all-ones
    mask. Returns (converted audio, reconstructed audio, reconstructed mel).
    """
    if mel.shape != mask.shape:
        raise DimensionError(f"mel {mel.shape} vs mask {mask.shape}")
    frames = mel.shape[-1]
    fake = forward_gen(tc.mul(mel, mask), mask)
    mel_fake = mel_fn(fake, frames)
    all_ones = tc.Tensor(np.ones(mask.shape))
    rec = backward_gen(mel_fake, all_ones)
    mel_rec = mel_fn(rec, frames)
    return fake, rec, mel_rec


def _check_blocks(terms, label: str, expected: int):
    if terms is None:
        raise ContractError(f"missing {label} block terms")
    if len(terms) != expected:
        raise ContractError(f"expected {expected} {label} block terms, got {len(terms)}")


def total_discriminator_loss(adv_xy: list[tc.Tensor], adv_yx: list[tc.Tensor],
                             adv2_x: list[tc.Tensor] | None = None,
                             adv2_y: list[tc.Tensor] | None = None,
                             num_blocks: int = NUM_BLOCKS) -> tc.Tensor:
    """Plain sum of per-block terms over both directions.

    The second-adversarial groups are optional so ablation variants without
    them remain expressible; when given, each group must have exactly
    ``num_blocks`` entries.
    """
    _check_blocks(adv_xy, "forward adversarial", num_blocks)
    _check_blocks(adv_yx, "backward adversarial", num_blocks)
    groups = [adv_xy, adv_yx]
    if adv2_x is not None or adv2_y is not None:
        _check_blocks(adv2_x, "forward second-adversarial", num_blocks)
        _check_blocks(adv2_y, "backward second-adversarial", num_blocks)
        groups += [adv2_x, adv2_y]
    total = None
    for group in groups:
        for term in group:
            total = term if total is None else tc.add(total, term)
    return total


@dataclass
class GeneratorLossTerms:
    """Everything entering the generator objective for one step.

    ``id_xy``/``id_yx`` may be None while the identity schedule is inactive
    (reported as exactly 0); the second-adversarial groups may be None only
    when that loss is disabled by configuration.
    """

    adv_xy: list[tc.Tensor]
    adv_yx: list[tc.Tensor]
    cyc_xyx: tc.Tensor
    cyc_yxy: tc.Tensor
    id_xy: tc.Tensor | None = None
    id_yx: tc.Tensor | None = None
    adv2_x: list[tc.Tensor] | None = None
    adv2_y: list[tc.Tensor] | None = None


def total_generator_loss(terms: GeneratorLossTerms, weights: LossWeights,
                         adv2_enabled: bool = True,
                         num_blocks: int = NUM_BLOCKS) -> tuple[tc.Tensor, dict[str, float]]:
    """Aggregate the generator objective.

    Returns the scalar loss tensor plus the unweighted component values
    (``adv``, ``adv2``, ``cyc``, ``id``) for reporting.
    """
    weights.validate()
    _check_blocks(terms.adv_xy, "forward adversarial", num_blocks)
    _check_blocks(terms.adv_yx, "backward adversarial", num_blocks)
    if terms.cyc_xyx is None or terms.cyc_yxy is None:
        raise ContractError("missing cycle-consistency terms")

    adv = None
    for term in list(terms.adv_xy) + list(terms.adv_yx):
        adv = term if adv is None else tc.add(adv, term)
    cyc = tc.add(terms.cyc_xyx, terms.cyc_yxy)

    total = tc.add(adv, cyc * weights.lambda_cyc)
    id_value = 0.0
    if terms.id_xy is not None or terms.id_yx is not None:
        if terms.id_xy is None or terms.id_yx is None:
            raise ContractError("identity terms must come in pairs")
        ident = tc.add(terms.id_xy, terms.id_yx)
        total = tc.add(total, ident * weights.lambda_id)
        id_value = ident.item()

    adv2_value = 0.0
    if adv2_enabled:
        _check_blocks(terms.adv2_x, "forward second-adversarial", num_blocks)
        _check_blocks(terms.adv2_y, "backward second-adversarial", num_blocks)
        adv2 = None
        for term in list(terms.adv2_x) + list(terms.adv2_y):
            adv2 = term if adv2 is None else tc.add(adv2, term)
        total = tc.add(total, adv2)
        adv2_value = adv2.item()
    elif terms.adv2_x is not None or terms.adv2_y is not None:
        raise ContractError("second-adversarial terms supplied but disabled")

    components = {"adv": adv.item(), "adv2": adv2_value, "cyc": cyc.item(), "id": id_value}
    return total, components

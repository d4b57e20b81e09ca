"""Warmup-stable-decay learning-rate schedule."""
from __future__ import annotations


def phase_lengths(total_steps: int, warmup: float = 0.1, decay: float = 0.1) -> tuple[int, int]:
    w = round(warmup * total_steps)
    d = round(decay * total_steps)
    if warmup > 0:
        w = max(w, 1)
    if decay > 0:
        d = max(d, 1)
    # very short runs: warmup wins, decay gets what is left
    w = min(w, total_steps)
    d = min(d, total_steps - w)
    return w, d


def wsd_lr(step: int, total_steps: int, peak: float, warmup: float = 0.1, decay: float = 0.1) -> float:
    """Learning rate for 0-based optimizer ``step``.

    Linear ramp reaching ``peak`` on the last warmup step, flat plateau, then a
    linear ramp that would hit zero one step after the final step.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    w, d = phase_lengths(total_steps, warmup, decay)
    if step < w:
        return peak * (step + 1) / w
    if step >= total_steps - d:
        return peak * (total_steps - step) / d
    return peak

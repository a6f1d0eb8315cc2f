"""Model averaging of per-epoch checkpoints.

Before the start epoch ``t0`` the average simply mirrors the online weights.
After it, ``running_mean`` applies ``avg <- tau * avg + (1 - tau) * theta`` with
``tau = (t - t0) / (t - t0 + 1)``, which is the arithmetic mean of every
checkpoint absorbed after ``t0``. ``fixed_ema`` uses a constant ``tau``.
"""
from __future__ import annotations

from typing import Optional

from .netcore import ParamSet

MODES = ("running_mean", "fixed_ema")


class ModelAverager:
    def __init__(self, init: ParamSet, t0: int, mode: str = "running_mean", tau: Optional[float] = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "fixed_ema" and (tau is None or not 0.0 <= tau < 1.0):
            raise ValueError("fixed_ema needs tau in [0, 1)")
        if t0 < 0:
            raise ValueError("t0 must be >= 0")
        self.t0 = int(t0)
        self.mode = mode
        self.tau = tau
        self.count_since_start = 0
        self.last_epoch: Optional[int] = None
        self.avg = init.copy()

    def absorb(self, epoch: int, online: ParamSet) -> "ModelAverager":
        """Fold in the online weights after ``epoch`` completed epochs."""
        if self.last_epoch is not None and epoch <= self.last_epoch:
            raise ValueError(f"epoch {epoch} absorbed after epoch {self.last_epoch}; epochs must increase")
        self.last_epoch = epoch
        if epoch <= self.t0:
            self.avg = online.copy()
            return self
        self.count_since_start += 1
        if self.mode == "running_mean":
            tau = (self.count_since_start - 1) / self.count_since_start
        else:
            tau = self.tau
        self.avg = self.avg.combine(online, tau, 1.0 - tau)
        return self

    def snapshot(self) -> ParamSet:
        return self.avg.copy()

    @property
    def active(self) -> bool:
        return self.count_since_start > 0


def default_t0(total_epochs: int) -> int:
    """Half the budget (100 of 200 epochs in the reference schedule)."""
    return total_epochs // 2

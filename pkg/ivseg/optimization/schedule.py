import math


def cosine_warmup_lr(step, warmup, total, peak, floor=0.0):
    """
    Linear 0 -> `peak` over `warmup` steps, then cosine decay from `peak` to
    `floor` at `total`
    """
    if not 0 <= step <= total:
        raise ValueError(f"Step {step} is outside [0, {total}]")

    if not 0 <= warmup < total:
        raise ValueError(f"Warmup {warmup} must lie in [0, {total})")

    if step < warmup:
        return peak * step / warmup

    progress = (step - warmup) / (total - warmup)

    return floor + (peak - floor) * (1.0 + math.cos(math.pi * progress)) / 2.0


class CosineWarmupSchedule:

    def __init__(self, warmup, total, peak, floor=0.0):
        cosine_warmup_lr(0, warmup, total, peak, floor)
        self.warmup = warmup
        self.total = total
        self.peak = peak
        self.floor = floor

    def __call__(self, step):
        return cosine_warmup_lr(step, self.warmup, self.total, self.peak, self.floor)

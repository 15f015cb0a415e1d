import logging

import torch

from utils.errors import StateError


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MIN_LR = 1e-7


def build_adam(param_groups, betas=ADAM_BETAS, eps=ADAM_EPS):
    """
    Adam over named parameter groups.

    Args:
        param_groups (dict): group name -> (parameters, learning rate).
    """
    groups = [
        {"params": list(params), "lr": lr, "name": name}
        for name, (params, lr) in param_groups.items()
    ]
    return torch.optim.Adam(groups, betas=betas, eps=eps)


def adam_step(optimizer):
    """
    Apply one bias-corrected Adam update from the populated gradients, then
    clear them. Moment estimates persist inside the optimizer.

    Raises:
        StateError: a trainable parameter has no gradient.
    """
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.requires_grad and p.grad is None:
                raise StateError(f"Missing gradient in parameter group '{group.get('name', '?')}'; run backward first.")
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def current_lrs(optimizer):
    return {group.get("name", str(i)): group["lr"] for i, group in enumerate(optimizer.param_groups)}


def plateau_schedule(history, patience, factor, current_lr, min_lr=MIN_LR):
    """
    Learning rate after the latest evaluation.

    The lr is multiplied by `factor` each time `patience` consecutive
    evaluations fail to improve on the best value so far; the count restarts
    after every decay. The result never drops below `min_lr` (an lr already at
    or below the floor is left as is).

    Args:
        history (list): Evaluation values (running-mean losses), oldest first.
        patience (int): Non-improving evaluations that trigger a decay.
        factor (float): Multiplier in (0, 1).
        current_lr (float): Learning rate before this evaluation.
    """
    if not history:
        raise ValueError("plateau_schedule needs at least one evaluation.")

    best = history[0]
    bad = 0
    for value in history[1:]:
        if value < best:
            best = value
            bad = 0
        else:
            bad += 1

    if bad == 0 or bad % patience != 0 or current_lr <= min_lr:
        return current_lr

    new_lr = max(current_lr * factor, min_lr)
    logging.info("Loss plateaued for %d evaluations: lr %.3g -> %.3g", bad, current_lr, new_lr)
    return new_lr


def apply_plateau(optimizer, history, patience, factor, min_lr=MIN_LR):
    """
    Run plateau_schedule on the smallest group lr and rescale every group by
    the same ratio, so the ordering of group lrs survives the floor.

    Returns:
        bool: True if the lrs decayed.
    """
    groups = optimizer.param_groups
    active = [group["lr"] for group in groups if group["lr"] > 0]
    if not active:
        return False
    lowest = min(active)
    new_lowest = plateau_schedule(history, patience, factor, lowest, min_lr)
    if new_lowest == lowest:
        return False
    ratio = new_lowest / lowest
    for group in groups:
        group["lr"] = new_lowest if group["lr"] == lowest else group["lr"] * ratio
    return True

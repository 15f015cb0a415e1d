import pytest
import torch

from utils.errors import StateError
from utils.optim import MIN_LR, adam_step, apply_plateau, build_adam, current_lrs, plateau_schedule


def _scalar_step(grad, lr=0.01):
    param = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
    optimizer = build_adam({"w": ([param], lr)})
    param.grad = torch.full_like(param, grad)
    adam_step(optimizer)
    return param.item(), param.grad


@pytest.mark.parametrize("grad", [3.0, -0.2, 1e-3])
def test_first_adam_step_is_lr_times_sign(grad):
    value, remaining_grad = _scalar_step(grad)
    expected = -0.01 if grad > 0 else 0.01
    assert value == pytest.approx(expected, rel=1e-4)
    assert remaining_grad is None


def test_zero_gradient_leaves_parameter():
    value, _ = _scalar_step(0.0)
    assert value == 0.0


def test_adam_is_deterministic():
    def run():
        torch.manual_seed(0)
        param = torch.nn.Parameter(torch.randn(5))
        optimizer = build_adam({"w": ([param], 0.1)})
        for _ in range(10):
            (param ** 2).sum().backward()
            adam_step(optimizer)
        return param.detach().clone()

    assert torch.equal(run(), run())


def test_step_without_gradient():
    param = torch.nn.Parameter(torch.zeros(2))
    optimizer = build_adam({"decoder": ([param], 0.1)})
    with pytest.raises(StateError, match="decoder"):
        adam_step(optimizer)


def test_flat_history_halves_once():
    assert plateau_schedule([1.0] * 6, 5, 0.5, 0.0004) == pytest.approx(0.0002)
    assert plateau_schedule([1.0] * 5, 5, 0.5, 0.0004) == 0.0004


def test_decay_at_third_non_improving_evaluation():
    history = [1.0, 0.9, 0.91, 0.92, 0.93]
    assert plateau_schedule(history[:4], 3, 0.5, 1.0) == 1.0
    assert plateau_schedule(history, 3, 0.5, 1.0) == 0.5


def test_improvement_resets_count():
    assert plateau_schedule([1.0, 1.1, 1.2, 0.5], 3, 0.5, 1.0) == 1.0


def test_count_restarts_after_decay():
    history = [1.0] + [1.0] * 3
    assert plateau_schedule(history, 3, 0.5, 1.0) == 0.5
    assert plateau_schedule(history + [1.0], 3, 0.5, 0.5) == 0.5
    assert plateau_schedule(history + [1.0] * 3, 3, 0.5, 0.5) == 0.25


def test_floor():
    assert plateau_schedule([1.0, 1.0], 1, 0.5, 1.5e-7) == MIN_LR
    assert plateau_schedule([1.0, 1.0], 1, 0.5, MIN_LR) == MIN_LR
    assert plateau_schedule([1.0, 1.0], 1, 0.5, 5e-8) == 5e-8


def test_empty_history():
    with pytest.raises(ValueError):
        plateau_schedule([], 3, 0.5, 1.0)


def _two_group_optimizer(encoder_lr, decoder_lr):
    a, b = torch.nn.Parameter(torch.zeros(1)), torch.nn.Parameter(torch.zeros(1))
    return build_adam({"encoder": ([a], encoder_lr), "decoder": ([b], decoder_lr)})


def test_apply_plateau_keeps_ratio():
    optimizer = _two_group_optimizer(0.00004, 0.0004)
    assert apply_plateau(optimizer, [1.0, 1.0], 1, 0.5)
    lrs = current_lrs(optimizer)
    assert lrs["encoder"] == pytest.approx(0.00002)
    assert lrs["decoder"] == pytest.approx(0.0002)


def test_apply_plateau_keeps_order_at_floor():
    optimizer = _two_group_optimizer(1.2e-7, 1.2e-6)
    for _ in range(5):
        apply_plateau(optimizer, [1.0, 1.0], 1, 0.5)
    lrs = current_lrs(optimizer)
    assert lrs["encoder"] == MIN_LR
    assert lrs["encoder"] < lrs["decoder"]


def test_apply_plateau_leaves_frozen_encoder():
    optimizer = _two_group_optimizer(0.0, 0.0004)
    assert apply_plateau(optimizer, [1.0, 1.0], 1, 0.5)
    assert current_lrs(optimizer) == {"encoder": 0.0, "decoder": pytest.approx(0.0002)}


def test_apply_plateau_without_decay():
    optimizer = _two_group_optimizer(0.1, 0.2)
    assert not apply_plateau(optimizer, [1.0, 0.5], 1, 0.5)
    assert current_lrs(optimizer) == {"encoder": 0.1, "decoder": 0.2}

import pytest
import torch

from derain_model.networks import freeze, init_decoder
from tests.conftest import TINY_ARCH
from utils.errors import ContractError, StateError
from utils.losses import (
    finetune_loss,
    image_gradients,
    kd_direct_loss,
    kd_indirect_loss,
    kd_total_loss,
    recog_loss,
    recon_loss,
)


def test_recog_loss_zero_for_perfect_scores():
    assert recog_loss(torch.tensor([1.0, 0.0, 1.0]), [1, 0, 1]).value == 0.0


def test_recog_loss_by_hand():
    loss = recog_loss(torch.tensor([0.5, 0.25], dtype=torch.float64), [1, 0])
    assert loss.value == pytest.approx(0.25 + 0.0625, abs=1e-12)


def test_recog_loss_length_mismatch():
    with pytest.raises(ContractError):
        recog_loss(torch.tensor([0.5, 0.5]), [1])


def test_image_gradients_pad_last_row_and_column():
    img = torch.tensor([[1.0, 2.0], [4.0, 8.0]])
    gx, gy = image_gradients(img)
    assert gx.tolist() == [[1.0, 0.0], [4.0, 0.0]]
    assert gy.tolist() == [[3.0, 6.0], [0.0, 0.0]]


def test_recon_loss_zero_for_identical_images():
    x = torch.rand(2, 3, 5, 5)
    loss = recon_loss(x, x.clone())
    assert loss.value == 0.0
    assert set(loss.terms) == {"pixel", "gradient"}


def test_recon_loss_by_hand():
    # one 1x2x2 sample: output [[1, 0], [0, 0]] against zeros
    out = torch.tensor([[[[1.0, 0.0], [0.0, 0.0]]]], dtype=torch.float64)
    tgt = torch.zeros_like(out)
    loss = recon_loss(out, tgt).breakdown()
    assert loss["pixel"] == pytest.approx(1.0 / 4, abs=1e-9)
    # gx = [[-1, 0], [0, 0]], gy = [[-1, 0], [0, 0]] -> 2 of 8 entries are 1
    assert loss["gradient"] == pytest.approx(2.0 / 8, abs=1e-9)


def test_recon_loss_sums_over_samples():
    a = torch.rand(1, 3, 4, 4, dtype=torch.float64)
    b = torch.rand(1, 3, 4, 4, dtype=torch.float64)
    single = recon_loss(a, b).value
    double = recon_loss(torch.cat([a, a]), torch.cat([b, b])).value
    assert double == pytest.approx(2 * single, rel=1e-12)


def test_recon_loss_weights():
    a, b = torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 4)
    plain = recon_loss(a, b).breakdown()
    weighted = recon_loss(a, b, {"pixel": 2.0, "gradient": 0.0})
    assert weighted.breakdown()["pixel"] == pytest.approx(2 * plain["pixel"])
    assert weighted.value == pytest.approx(2 * plain["pixel"])


def test_recon_loss_shape_mismatch():
    with pytest.raises(ContractError):
        recon_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


def test_finetune_loss_matches_recon_loss():
    a, b = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
    assert finetune_loss(a, b).value == recon_loss(a, b).value


def test_recon_loss_gradcheck():
    target = torch.rand(1, 3, 4, 4, dtype=torch.float64)
    x = torch.rand(1, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda t: recon_loss(t, target).total, (x,))


def test_kd_direct_loss_terms():
    student = torch.zeros(2, 4, 2, 2, dtype=torch.float64)
    recog = torch.ones_like(student)
    recon = torch.full_like(student, 2.0)
    loss = kd_direct_loss(student, recog, recon).breakdown()
    # per-sample means 1 and 4, summed over 2 samples
    assert loss == pytest.approx({"to_recog": 2.0, "to_recon": 8.0})
    assert kd_direct_loss(student, teacher_recon_feats=recon).breakdown() == pytest.approx({"to_recon": 8.0})


def test_kd_direct_loss_needs_a_teacher():
    with pytest.raises(ContractError):
        kd_direct_loss(torch.zeros(1, 4, 2, 2))


def test_kd_indirect_loss_zero_when_student_matches():
    decoder = freeze(init_decoder(0, TINY_ARCH, "recognition"))
    feats = torch.rand(2, 4, 2, 2)
    loss = kd_indirect_loss(feats, teacher_recog_feats=feats.clone(), frozen_recog_decoder=decoder)
    assert loss.value == 0.0


def test_kd_indirect_loss_rejects_trainable_decoder():
    decoder = init_decoder(0, TINY_ARCH, "reconstruction")
    feats = torch.rand(1, 4, 2, 2)
    with pytest.raises(ContractError, match="frozen"):
        kd_indirect_loss(feats, teacher_recon_feats=feats, frozen_recon_decoder=decoder)


def test_kd_indirect_loss_requires_decoder_for_teacher():
    with pytest.raises(ContractError):
        kd_indirect_loss(torch.rand(1, 4, 2, 2), teacher_recog_feats=torch.rand(1, 4, 2, 2))


def test_kd_total_gradient_reaches_student_only():
    recog_decoder = freeze(init_decoder(0, TINY_ARCH, "recognition").double())
    recon_decoder = freeze(init_decoder(1, TINY_ARCH, "reconstruction").double())
    teacher_a = torch.rand(1, 4, 2, 2, dtype=torch.float64)
    teacher_b = torch.rand(1, 4, 2, 2, dtype=torch.float64)
    student = torch.rand(1, 4, 2, 2, dtype=torch.float64, requires_grad=True)

    def total(s):
        return kd_total_loss(s, teacher_a, teacher_b, recog_decoder, recon_decoder).total

    assert torch.autograd.gradcheck(total, (student,))
    loss = kd_total_loss(student, teacher_a, teacher_b, recog_decoder, recon_decoder)
    loss.backward()
    assert student.grad is not None
    assert all(p.grad is None for p in recon_decoder.parameters())
    assert set(loss.terms) == {"kdd", "kdi"}
    assert loss.value == pytest.approx(sum(loss.breakdown().values()))


def test_backward_without_graph():
    loss = recon_loss(torch.zeros(1, 3, 2, 2), torch.ones(1, 3, 2, 2))
    with pytest.raises(StateError):
        loss.backward()


def test_image_gradients_by_hand():
    img = torch.tensor([[0.0, 0.5], [0.25, 1.0]], dtype=torch.float64)
    gx, gy = image_gradients(img)
    assert gx[0, 0].item() == pytest.approx(0.5, abs=1e-9)
    assert gy[0, 0].item() == pytest.approx(0.25, abs=1e-9)
    assert gx[1, 0].item() == pytest.approx(0.75, abs=1e-9)
    assert gy[0, 1].item() == pytest.approx(0.5, abs=1e-9)


def test_recog_loss_two_residuals():
    loss = recog_loss(torch.tensor([0.2, 0.9], dtype=torch.float64), [0, 1])
    assert loss.value == pytest.approx(0.05, abs=1e-9)
    assert loss.breakdown() == pytest.approx({"recog": 0.05}, abs=1e-9)


def test_recon_loss_constant_offset_is_exact():
    target = torch.arange(48, dtype=torch.float64).reshape(1, 3, 4, 4) / 64.0
    loss = recon_loss(target + 0.25, target).breakdown()
    assert loss["pixel"] == 0.0625
    assert loss["gradient"] == 0.0


def test_conflicting_teachers_balance():
    student = torch.zeros(1, 1, dtype=torch.float64, requires_grad=True)
    loss = kd_direct_loss(student, torch.ones(1, 1, dtype=torch.float64), -torch.ones(1, 1, dtype=torch.float64))
    assert loss.value == 2.0
    loss.backward()
    assert student.grad.item() == 0.0


def test_kd_indirect_loss_linear_decoder_by_hand():
    decoder = torch.nn.Conv2d(1, 1, 1, bias=False).double()
    with torch.no_grad():
        decoder.weight.fill_(3.0)
    freeze(decoder)
    student = torch.tensor([[[[0.5, 1.0], [0.0, 0.25]]]], dtype=torch.float64)
    teacher = torch.tensor([[[[0.0, 1.0], [0.5, 0.75]]]], dtype=torch.float64)
    loss = kd_indirect_loss(student, teacher_recon_feats=teacher, frozen_recon_decoder=decoder)
    # w^2 * mean((s - t)^2) = 9 * (0.25 + 0 + 0.25 + 0.25) / 4
    assert loss.value == pytest.approx(9.0 * 0.75 / 4.0, abs=1e-12)


def test_recog_loss_gradcheck():
    labels = [1, 0, 1]
    scores = torch.tensor([0.3, 0.6, 0.9], dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda s: recog_loss(s, labels).total, (scores,))


def test_kd_direct_loss_gradcheck():
    recog = torch.rand(2, 4, 2, 2, dtype=torch.float64)
    recon = torch.rand(2, 4, 2, 2, dtype=torch.float64)
    student = torch.rand(2, 4, 2, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda s: kd_direct_loss(s, recog, recon).total, (student,))


def test_kd_indirect_loss_gradcheck():
    recog_decoder = freeze(init_decoder(0, TINY_ARCH, "recognition").double())
    recon_decoder = freeze(init_decoder(1, TINY_ARCH, "reconstruction").double())
    recog = torch.rand(2, 4, 2, 2, dtype=torch.float64)
    recon = torch.rand(2, 4, 2, 2, dtype=torch.float64)
    student = torch.rand(2, 4, 2, 2, dtype=torch.float64, requires_grad=True)

    def indirect(s):
        return kd_indirect_loss(s, recog, recon, recog_decoder, recon_decoder).total

    assert torch.autograd.gradcheck(indirect, (student,))

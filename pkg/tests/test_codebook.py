"""Tests for the condition encoder, codebook, quantizer and VQ loss."""

import math

import numpy as np
import pytest
import torch

from src.nlosltm.codebook import (
    Codebook,
    ConditionEncoder,
    encode_condition,
    probe_accuracy,
    quantize,
    vq_loss,
)
from src.nlosltm.errors import ContractError, DimensionError, NumericError


def _unit(rows, dim, seed):
    g = torch.Generator().manual_seed(seed)
    return torch.nn.functional.normalize(torch.randn(rows, dim, generator=g), dim=1)


class TestCodebook:
    def test_rows_unit_norm(self):
        cb = Codebook(5, 12, seed=3)
        assert torch.allclose(cb.codes.norm(dim=1), torch.ones(5), atol=1e-6)
        assert (cb.n_conditions, cb.cond_dim) == (5, 12)

    def test_seeded_init(self):
        assert torch.equal(Codebook(4, 8, seed=1).codes, Codebook(4, 8, seed=1).codes)
        assert not torch.equal(Codebook(4, 8, seed=1).codes, Codebook(4, 8, seed=2).codes)

    def test_renormalize(self):
        cb = Codebook(3, 4)
        with torch.no_grad():
            cb.codes.mul_(3.0)
        cb.renormalize()
        assert torch.allclose(cb.codes.norm(dim=1), torch.ones(3), atol=1e-6)

    def test_empty(self):
        with pytest.raises(ContractError):
            Codebook(0, 4)


class TestQuantize:
    def test_test_mode_matches_brute_force(self):
        codes = _unit(6, 8, seed=0)
        l = _unit(1000, 8, seed=1)
        got = quantize(l, codes, "test").index.numpy()
        c, x = codes.numpy(), l.numpy()
        expected = [int(np.argmin([np.sum((x[i] - c[k]) ** 2) for k in range(len(c))])) for i in range(len(x))]
        assert got.tolist() == expected

    def test_train_mode_returns_label(self):
        codes = _unit(6, 8, seed=0)
        l = codes[2].clone()
        res = quantize(l, codes, "train", label=4)
        assert res.index == 4
        assert torch.equal(res.z_q, codes[4])

    def test_single_vector_returns_int(self):
        codes = _unit(3, 4, seed=5)
        res = quantize(codes[1], codes, "test")
        assert res.index == 1
        assert res.z_q.shape == (4,)

    def test_tie_goes_to_lowest_index(self):
        codes = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
        assert quantize(torch.tensor([0.0, 1.0]), codes, "test").index == 0

    def test_train_mode_needs_label(self):
        with pytest.raises(ContractError):
            quantize(_unit(2, 4, 0), _unit(3, 4, 1), "train")

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            quantize(_unit(2, 4, 0), _unit(3, 4, 1), "train", label=[0, 3])

    def test_bad_mode(self):
        with pytest.raises(ContractError):
            quantize(_unit(2, 4, 0), _unit(3, 4, 1), "eval")

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            quantize(_unit(2, 5, 0), _unit(3, 4, 1), "test")


class TestVqLoss:
    def test_infonce_hand_value(self):
        loss = vq_loss(torch.tensor([1.0, 0.0]), torch.eye(2), 0, tau=1.0, alpha=1.0, beta=0.25)
        assert loss.infonce.item() == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-5)
        assert loss.infonce.item() == pytest.approx(0.31326, abs=1e-5)
        assert loss.codebook.item() == pytest.approx(0.0, abs=1e-7)
        assert loss.commit.item() == pytest.approx(0.0, abs=1e-7)

    def test_codebook_term_does_not_reach_encoder(self):
        l = torch.tensor([[0.6, 0.8]], requires_grad=True)
        codes = torch.eye(2).requires_grad_(True)
        vq_loss(l, codes, [0], tau=0.5, alpha=1.0, beta=0.25).codebook.backward()
        assert l.grad is None
        assert codes.grad[0].abs().sum() > 0
        assert torch.equal(codes.grad[1], torch.zeros(2))

    def test_commit_term_does_not_reach_codebook(self):
        l = torch.tensor([[0.6, 0.8]], requires_grad=True)
        codes = torch.eye(2).requires_grad_(True)
        vq_loss(l, codes, [0], tau=0.5, alpha=1.0, beta=0.25).commit.backward()
        assert codes.grad is None
        assert l.grad.abs().sum() > 0

    def test_weights_scale_terms(self):
        l = _unit(4, 6, 2)
        codes = _unit(3, 6, 3)
        a = vq_loss(l, codes, [0, 1, 2, 0], tau=0.07, alpha=1.0, beta=1.0)
        b = vq_loss(l, codes, [0, 1, 2, 0], tau=0.07, alpha=2.0, beta=0.5)
        assert b.codebook.item() == pytest.approx(2.0 * a.codebook.item(), rel=1e-6)
        assert b.commit.item() == pytest.approx(0.5 * a.commit.item(), rel=1e-6)
        assert a.total.item() == pytest.approx((a.infonce + a.codebook + a.commit).item())

    def test_bad_tau(self):
        with pytest.raises(ContractError):
            vq_loss(_unit(1, 2, 0), torch.eye(2), 0, tau=0.0, alpha=1.0, beta=0.25)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            vq_loss(torch.tensor([[float("nan"), 0.0]]), torch.eye(2), 0, tau=1.0, alpha=1.0, beta=0.25)


class TestConditionEncoder:
    def test_unit_norm_output(self):
        torch.manual_seed(0)
        enc = ConditionEncoder(1, (16, 16), widths=(4, 8), cond_dim=6)
        l = enc(torch.rand(3, 1, 16, 16))
        assert l.shape == (3, 6)
        assert torch.allclose(l.norm(dim=1), torch.ones(3), atol=1e-5)

    def test_single_image(self):
        torch.manual_seed(0)
        enc = ConditionEncoder(1, (16, 16), widths=(4,), cond_dim=6)
        assert encode_condition(enc, torch.rand(1, 16, 16)).shape == (6,)

    def test_wrong_shape(self):
        enc = ConditionEncoder(1, (16, 16), widths=(4,), cond_dim=6)
        with pytest.raises(DimensionError):
            enc(torch.rand(2, 1, 8, 8))
        with pytest.raises(DimensionError):
            enc(torch.rand(2, 3, 16, 16))


class TestProbeAccuracy:
    def test_codes_at_encodings_are_perfect(self):
        torch.manual_seed(4)
        enc = ConditionEncoder(1, (16, 16), widths=(4, 8), cond_dim=8)
        proj = torch.rand(4, 1, 16, 16)
        cb = Codebook(4, 8)
        with torch.no_grad():
            cb.codes.copy_(enc(proj))
        assert probe_accuracy(enc, cb, proj, torch.arange(4)) == 1.0
        assert probe_accuracy(enc, cb, proj, torch.tensor([1, 0, 3, 2])) == 0.0

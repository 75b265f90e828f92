import pytest
import torch

from mvskit_trainer.model import NetworkSpec, build_model, encoder_widths


def _inputs(h=64, w=64, batch=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (
        torch.rand((batch, 3, h, w), generator=g),
        torch.rand((batch, 2, h, w), generator=g) * 3.14,
        torch.rand((batch, 1, h, w), generator=g),
    )


class TestForward:
    def test_shape_and_open_range(self):
        model = build_model()
        model.eval()
        with torch.no_grad():
            out = model(*_inputs(64, 64))
        assert out.shape == (1, 1, 64, 64)
        assert float(out.min()) > 0.0
        assert float(out.max()) < 1.0

    def test_rectangular_input(self):
        model = build_model()
        model.eval()
        with torch.no_grad():
            out = model(*_inputs(48, 80))
        assert out.shape == (1, 1, 48, 80)

    def test_zero_input_finite(self):
        model = build_model()
        model.eval()
        with torch.no_grad():
            out = model(
                torch.zeros(1, 3, 64, 64), torch.zeros(1, 2, 64, 64), torch.zeros(1, 1, 64, 64)
            )
        assert torch.isfinite(out).all()

    def test_indivisible_size_rejected(self):
        model = build_model()
        with pytest.raises(ValueError):
            model(*_inputs(60, 64))


class TestArchitecture:
    def test_encoder_widths(self):
        model = build_model()
        for name in ("image", "normal", "counter"):
            assert encoder_widths(model, name) == [32, 64, 128, 256]

    def test_three_encoders_with_expected_input_channels(self):
        model = build_model()
        first_convs = {
            name: next(m for m in enc.modules() if isinstance(m, torch.nn.Conv2d))
            for name, enc in model.encoders.items()
        }
        assert first_convs["image"].in_channels == 3
        assert first_convs["normal"].in_channels == 2
        assert first_convs["counter"].in_channels == 1

    def test_head_is_conv_then_sigmoid(self):
        model = build_model()
        assert isinstance(model.head, torch.nn.Conv2d)
        assert model.head.out_channels == 1
        with torch.no_grad():
            out = model(*_inputs())
        assert (out > 0).all() and (out < 1).all()

    def test_early_fusion_variant(self):
        model = build_model(NetworkSpec(fusion="early"))
        assert list(model.encoders) == ["early"]
        first_conv = next(m for m in model.encoders["early"].modules() if isinstance(m, torch.nn.Conv2d))
        assert first_conv.in_channels == 6
        model.eval()
        with torch.no_grad():
            out = model(*_inputs())
        assert out.shape == (1, 1, 64, 64)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NetworkSpec(fusion="late")

"""ViT-lite encoder: patch extraction, positional codes, transformer stack."""

import pytest
import torch

from ovdet.encoder import (
    Encoder,
    EncoderConfig,
    ImageSample,
    PatchGrid,
    extract_patches,
    sinusoidal_positions,
)


def make_image(h=64, w=64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return ImageSample(torch.rand(h, w, 3, generator=gen))


class TestPatchify:
    def test_16x16_ps8_gives_2x2_grid(self):
        enc = Encoder(EncoderConfig(patch_size=8))
        grid = enc.patchify(make_image(16, 16))
        assert (grid.grid_h, grid.grid_w) == (2, 2)
        assert grid.tokens.shape == (4, enc.cfg.d)

    def test_64x64_ps8_gives_64_tokens(self):
        enc = Encoder(EncoderConfig(patch_size=8))
        grid = enc.patchify(make_image())
        assert grid.tokens.shape[0] == 64

    def test_non_divisible_rejected(self):
        enc = Encoder(EncoderConfig(patch_size=8))
        with pytest.raises(ValueError):
            enc.patchify(make_image(60, 64))

    def test_single_patch_difference_localized(self):
        """Two images differing in one patch differ in exactly one token row."""
        enc = Encoder(EncoderConfig(patch_size=8))
        img_a = make_image(32, 32, seed=1)
        pixels_b = img_a.pixels.clone()
        pixels_b[8:16, 16:24] = 1.0 - pixels_b[8:16, 16:24]  # patch (row 1, col 2)
        with torch.no_grad():
            ta = enc.patchify(img_a, add_positions=False).tokens
            tb = enc.patchify(ImageSample(pixels_b), add_positions=False).tokens
        diff_rows = (ta - tb).abs().sum(dim=-1).nonzero().flatten().tolist()
        assert diff_rows == [1 * 4 + 2]

    def test_extract_patches_row_major(self):
        img = torch.arange(8 * 8 * 3, dtype=torch.float32).reshape(8, 8, 3)
        flat, gh, gw = extract_patches(img, 4)
        assert (gh, gw) == (2, 2)
        assert torch.equal(flat[0], img[0:4, 0:4].reshape(-1))
        assert torch.equal(flat[1], img[0:4, 4:8].reshape(-1))
        assert torch.equal(flat[2], img[4:8, 0:4].reshape(-1))
        assert torch.equal(flat[3], img[4:8, 4:8].reshape(-1))

    def test_batched_extraction_matches_loop(self):
        gen = torch.Generator().manual_seed(3)
        batch = torch.rand(4, 16, 16, 3, generator=gen)
        flat, gh, gw = extract_patches(batch, 8)
        for b in range(4):
            single, _, _ = extract_patches(batch[b], 8)
            assert torch.equal(flat[b], single)


class TestPositions:
    def test_shape(self):
        assert sinusoidal_positions(3, 5, 16).shape == (15, 16)

    def test_distinct_rows(self):
        pos = sinusoidal_positions(4, 4, 32)
        dists = torch.cdist(pos, pos) + torch.eye(16) * 1e9
        assert float(dists.min()) > 1e-3

    def test_deterministic(self):
        assert torch.equal(sinusoidal_positions(2, 2, 8), sinusoidal_positions(2, 2, 8))


class TestEncode:
    def test_zero_layers_identity(self):
        enc = Encoder(EncoderConfig(num_layers=0))
        grid = enc.patchify(make_image())
        out = enc.encode(grid)
        assert torch.equal(out.tokens, grid.tokens)

    def test_shape_preserved(self):
        enc = Encoder(EncoderConfig(num_layers=3))
        out = enc(make_image())
        assert out.tokens.shape == (64, enc.cfg.d)
        assert (out.grid_h, out.grid_w) == (8, 8)

    def test_width_mismatch_rejected(self):
        enc = Encoder(EncoderConfig())
        with pytest.raises(ValueError):
            enc.encode(PatchGrid(torch.zeros(4, enc.cfg.d + 1), 2, 2))

    def test_deterministic_per_seed(self):
        a = Encoder(EncoderConfig(seed=9))(make_image(seed=2)).tokens
        b = Encoder(EncoderConfig(seed=9))(make_image(seed=2)).tokens
        assert torch.equal(a, b)

    def test_permutation_sensitivity(self):
        """Positional codes make encoding depend on patch arrangement."""
        enc = Encoder(EncoderConfig())
        img = make_image(32, 32, seed=5)
        perm_pixels = img.pixels.reshape(4, 8, 4, 8, 3).transpose(0, 2).reshape(32, 32, 3)
        with torch.no_grad():
            a = enc(img).tokens
            b = enc(ImageSample(perm_pixels)).tokens
        assert not torch.allclose(a.abs().sum(dim=-1).sort().values, b.abs().sum(dim=-1).sort().values)

    def test_encode_batch_matches_single(self):
        enc = Encoder(EncoderConfig(num_layers=2))
        gen = torch.Generator().manual_seed(4)
        batch = torch.rand(3, 64, 64, 3, generator=gen)
        with torch.no_grad():
            batched = enc.encode_batch(batch)
            singles = torch.stack([enc(ImageSample(batch[b])).tokens for b in range(3)])
        assert torch.allclose(batched, singles, atol=1e-5)

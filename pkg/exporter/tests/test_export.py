import os
import struct

import numpy as np
import pytest
import torch
from conftest import make_png
from PIL import Image

from featexport import (ExportError, ExportSpec, export_images, load_image,
                        pad_to_multiple, seeded_state_dict, sha256_file,
                        write_tensor)
from featexport.backbone import (build_backbone, load_weights,
                                 weights_digest)
from featexport.cli import main


def read_header(path):
    raw = open(path, "rb").read()
    assert raw[:8] == b"GRFTTNSR"
    version, dtype, ndim = struct.unpack_from("<HBB", raw, 8)
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    return version, dtype, dims, raw


class TestContainer:
    def test_header_layout(self, tmp_path):
        a = np.arange(6, dtype=np.float32).reshape(2, 3)
        p = tmp_path / "t.tns"
        write_tensor(a, p)
        version, dtype, dims, raw = read_header(p)
        assert (version, dtype, dims) == (1, 0, (2, 3))
        assert raw[12 + 4 * len(dims):] == a.tobytes()

    def test_rejects_bad_ranks(self, tmp_path):
        with pytest.raises(ExportError):
            write_tensor(np.zeros((1, 1, 1, 1, 1), dtype=np.float32),
                         tmp_path / "x.tns")
        with pytest.raises(ExportError):
            write_tensor(np.zeros((0, 3), dtype=np.float32),
                         tmp_path / "y.tns")


class TestImageLoading:
    def test_rgb_range_and_layout(self, tmp_path):
        a = np.zeros((4, 5, 3), dtype=np.uint8)
        a[1, 2] = (255, 0, 128)
        p = tmp_path / "i.png"
        Image.fromarray(a, "RGB").save(p)
        img = load_image(p)
        assert img.shape == (3, 4, 5)
        assert img[0, 1, 2] == 1.0 and img[1, 1, 2] == 0.0
        assert abs(img[2, 1, 2] - 128 / 255) < 1e-7

    def test_non_rgb_converted_with_warning(self, tmp_path):
        p = make_png(tmp_path / "gray.png", 8, 8, mode="L")
        with pytest.warns(UserWarning, match="converted to RGB"):
            img = load_image(p)
        assert img.shape == (3, 8, 8)
        assert np.array_equal(img[0], img[1])

    def test_pad_replicates_edges(self):
        a = np.arange(2 * 3 * 5, dtype=np.float32).reshape(2, 3, 5)
        padded, (ph, pw) = pad_to_multiple(a)
        assert (ph, pw) == (1, 3) and padded.shape == (2, 4, 8)
        assert np.array_equal(padded[:, 3, :], padded[:, 2, :])
        assert np.array_equal(padded[:, :, 5], padded[:, :, 4])

    def test_pad_noop_when_divisible(self):
        a = np.zeros((1, 4, 8), dtype=np.float32)
        padded, pads = pad_to_multiple(a)
        assert pads == (0, 0) and padded is a


class TestBackbone:
    def test_seeded_weights_reproducible(self):
        s1 = seeded_state_dict(seed=3)
        s2 = seeded_state_dict(seed=3)
        s3 = seeded_state_dict(seed=4)
        assert all(torch.equal(s1[k], s2[k]) for k in s1)
        assert any(not torch.equal(s1[k], s3[k]) for k in s1)

    def test_missing_weights_error_names_artifact(self, tmp_path):
        model = build_backbone()
        with pytest.raises(ExportError, match="vgg16-397923af.pth"):
            load_weights(model, tmp_path / "absent.pth")

    def test_incompatible_state_dict_rejected(self, tmp_path):
        p = tmp_path / "bad.pth"
        torch.save({"not_a_layer": torch.zeros(3)}, p)
        with pytest.raises(ExportError, match="missing"):
            load_weights(build_backbone(), p)

    def test_unknown_tap(self):
        with pytest.raises(ExportError, match="unknown tap"):
            build_backbone("conv9")

    def test_digest_stable_across_save_load(self, tmp_path, weights_path):
        m1 = build_backbone()
        load_weights(m1, weights_path)
        p = tmp_path / "again.pth"
        torch.save(m1.state_dict(), p)
        m2 = build_backbone()
        load_weights(m2, p)
        assert weights_digest(m1) == weights_digest(m2)


class TestExport:
    def test_shape_contract(self, tmp_path, weights_path):
        img = make_png(tmp_path / "a_left.png", 64, 128)
        spec = ExportSpec(weights=weights_path, out_dir=str(tmp_path / "o"))
        export_images([img], spec)
        _, _, dims, _ = read_header(tmp_path / "o" / "a_left.tns")
        assert dims == (256, 16, 32)

    def test_padding_recorded(self, tmp_path, weights_path):
        img = make_png(tmp_path / "b_left.png", 30, 62)
        spec = ExportSpec(weights=weights_path, out_dir=str(tmp_path / "o"))
        entries = export_images([img], spec)
        _, _, dims, _ = read_header(tmp_path / "o" / "b_left.tns")
        assert dims == (256, 8, 16)
        assert entries["pad.b_left"] == "2,2"

    def test_reexport_bitwise(self, tmp_path, weights_path):
        img = make_png(tmp_path / "c_left.png", 16, 32)
        b = []
        for name in ("o1", "o2"):
            spec = ExportSpec(weights=weights_path,
                              out_dir=str(tmp_path / name))
            export_images([img], spec)
            b.append(open(tmp_path / name / "c_left.tns", "rb").read())
        assert b[0] == b[1]

    def test_black_vs_white_differ(self, tmp_path, weights_path):
        black = tmp_path / "k_left.png"
        white = tmp_path / "w_left.png"
        Image.fromarray(np.zeros((16, 16, 3), np.uint8), "RGB").save(black)
        Image.fromarray(np.full((16, 16, 3), 255, np.uint8), "RGB").save(white)
        spec = ExportSpec(weights=weights_path, out_dir=str(tmp_path / "o"))
        export_images([str(black), str(white)], spec)
        a = open(tmp_path / "o" / "k_left.tns", "rb").read()
        b = open(tmp_path / "o" / "w_left.tns", "rb").read()
        assert a != b

    def test_manifest_contents(self, tmp_path, weights_path):
        img = make_png(tmp_path / "d_left.png", 16, 32)
        out = tmp_path / "o"
        spec = ExportSpec(weights=weights_path, out_dir=str(out))
        entries = export_images([img], spec)
        text = dict(line.split("=", 1)
                    for line in (out / "manifest.txt").read_text().splitlines())
        assert text == {k: str(v) for k, v in entries.items()}
        assert text["backbone"] == "vgg16"
        assert text["tap"].startswith("conv3")
        assert text["normalize.mean"] == "0.485,0.456,0.406"
        assert text["normalize.std"] == "0.229,0.224,0.225"
        assert text["output.d_left"] == sha256_file(out / "d_left.tns")
        assert text["input.d_left"] == sha256_file(img)
        assert len(text["weights.sha256"]) == 64

    def test_input_validation(self, tmp_path, weights_path):
        spec = ExportSpec(weights=weights_path, out_dir=str(tmp_path / "o"))
        with pytest.raises(ExportError, match="no input images"):
            export_images([], spec)
        img = make_png(tmp_path / "e_left.png", 8, 8)
        with pytest.raises(ExportError, match="duplicate"):
            export_images([img, img], spec)
        bad = ExportSpec(weights=weights_path, out_dir=str(tmp_path / "o"),
                         tap="conv9")
        with pytest.raises(ExportError, match="unknown tap"):
            export_images([img], bad)


class TestCli:
    def test_round_trip(self, tmp_path):
        img = make_png(tmp_path / "f_left.png", 16, 32)
        w = str(tmp_path / "w.pth")
        assert main(["init-weights", "--out", w, "--seed", "1"]) == 0
        assert main(["export", "--images", img, "--weights", w,
                     "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "f_left.tns").exists()
        assert (tmp_path / "o" / "manifest.txt").exists()

    def test_usage_error(self, capsys):
        assert main(["export", "--images", "x.png"]) == 2
        capsys.readouterr()

    def test_runtime_error(self, tmp_path, capsys):
        img = make_png(tmp_path / "g_left.png", 8, 8)
        rc = main(["export", "--images", img, "--weights",
                   str(tmp_path / "none.pth"), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "init-weights" in capsys.readouterr().err

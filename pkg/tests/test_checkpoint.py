import struct

import numpy as np
import pytest

from svtr2.checkpoint import (MAGIC, checkpoint_from_model, from_bytes, load_checkpoint, model_from_checkpoint,
                              save_checkpoint, to_bytes)
from svtr2.errors import CharsetMismatchError, FormatError, TruncatedFileError
from svtr2.model import ModelConfig, TextRecognizer
from svtr2.msr import Charset
from svtr2.tensor import no_grad

CHARSET = list("acdehilnorst")


@pytest.fixture(scope="module")
def model():
    return TextRecognizer(ModelConfig(num_classes=12, seed=2), dtype=np.float32)


class TestFormat:
    def test_preamble(self, model):
        blob = to_bytes(checkpoint_from_model(model, CHARSET, "B", step=7))
        assert blob[:8] == b"SVTR2CKP" == MAGIC
        (hlen,) = struct.unpack_from("<I", blob, 8)
        assert blob[12 + hlen - 1:12 + hlen] == b"}"

    def test_round_trip_is_byte_identical(self, model, tmp_path):
        blob = to_bytes(checkpoint_from_model(model, CHARSET, "A", step=3, meta={"note": "x"}))
        ckpt = from_bytes(blob)
        assert to_bytes(ckpt) == blob
        assert (ckpt.phase, ckpt.step, ckpt.variant, ckpt.meta) == ("A", 3, "Nano", {"note": "x"})
        path = save_checkpoint(ckpt, tmp_path / "m.ckpt")
        assert path.read_bytes() == blob and to_bytes(load_checkpoint(path)) == blob

    def test_bad_magic(self, model):
        blob = to_bytes(checkpoint_from_model(model, CHARSET, "A"))
        with pytest.raises(FormatError):
            from_bytes(b"NOTACKPT" + blob[8:])

    @pytest.mark.parametrize("cut", [4, 10, 40, -1])
    def test_truncation(self, model, cut):
        blob = to_bytes(checkpoint_from_model(model, CHARSET, "A"))
        with pytest.raises(TruncatedFileError):
            from_bytes(blob[:cut])

    def test_trailing_bytes(self, model):
        with pytest.raises(FormatError):
            from_bytes(to_bytes(checkpoint_from_model(model, CHARSET, "A")) + b"\0")

    def test_unknown_phase(self, model):
        with pytest.raises(FormatError):
            to_bytes(checkpoint_from_model(model, CHARSET, "C"))


class TestModelRestore:
    def test_weights_and_outputs_restored(self, model, rng):
        restored = model_from_checkpoint(from_bytes(to_bytes(checkpoint_from_model(model, CHARSET, "B"))))
        x = rng.random((2, 3, 32, 64)).astype(np.float32)
        with no_grad():
            np.testing.assert_array_equal(model.ctc_logits(x).data, restored.ctc_logits(x).data)
        assert restored.sgm is not None

    def test_inference_checkpoint_has_no_sgm(self, model):
        stripped = model.strip_for_inference()
        full = to_bytes(checkpoint_from_model(model, CHARSET, "B"))
        lean = checkpoint_from_model(stripped, CHARSET, "inference")
        assert not any(name.startswith("sgm.") for name in lean.arrays)
        assert len(to_bytes(lean)) < len(full)
        restored = model_from_checkpoint(lean)
        assert restored.sgm is None and restored.inference_only

    def test_stripped_model_cannot_claim_training_phase(self, model):
        with pytest.raises(FormatError):
            checkpoint_from_model(model.strip_for_inference(), CHARSET, "B")

    def test_charset_mismatch(self, model):
        ckpt = checkpoint_from_model(model, CHARSET, "A")
        model_from_checkpoint(ckpt, Charset(CHARSET).hash)
        with pytest.raises(CharsetMismatchError):
            model_from_checkpoint(ckpt, Charset("acdehilnorsx").hash)

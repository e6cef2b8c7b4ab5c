import json
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from .exceptions import (
    ConfigurationException,
    ErrorCode,
    InputException,
    ShapeException,
    custom_exception_handler,
)
from .renderers import render_result, write_json
from .seeding import derive_seed, numpy_rng, torch_generator
from .versioning import code_version_hash, git_blob_hash


class ExceptionHandlerTests(TestCase):
    def test_lab_exception_envelope(self):
        envelope = custom_exception_handler(InputException("labels are empty", ErrorCode.EMPTY_INPUT))

        self.assertEqual(
            envelope,
            {"success": False, "error": {"code": "40001", "message": "labels are empty"}, "data": None},
        )

    def test_default_detail_and_code(self):
        exc = ShapeException()

        self.assertEqual(exc.detail, "Shape mismatch.")
        self.assertEqual(exc.error_code, ErrorCode.SHAPE_MISMATCH)
        self.assertIsInstance(exc, ConfigurationException)

    def test_unexpected_exception_maps_to_internal_error(self):
        with self.assertLogs("prompt_vit_commons.exceptions", level="ERROR"):
            envelope = custom_exception_handler(RuntimeError("boom"))

        self.assertEqual(envelope["error"]["code"], ErrorCode.INTERNAL_ERROR)
        self.assertIn("RuntimeError: boom", envelope["error"]["message"])


class RendererTests(TestCase):
    def test_render_result_converts_numpy_values(self):
        envelope = render_result({"auc": np.float64(0.75), "n": np.int64(4), "path": Path("runs/a")})

        self.assertEqual(envelope["data"], {"auc": 0.75, "n": 4, "path": "runs/a"})
        self.assertTrue(envelope["success"])
        self.assertIsNone(envelope["error"])

    def test_write_json_is_sorted_utf8_with_trailing_newline(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nested" / "out.json"
            write_json(path, {"b": 1, "a": "é"})
            text = path.read_bytes().decode("utf-8")

        self.assertTrue(text.endswith("}\n"))
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(json.loads(text), {"a": "é", "b": 1})


class SeedingTests(TestCase):
    def test_derived_seeds_are_stable_and_distinct(self):
        self.assertEqual(derive_seed(7, "split"), derive_seed(7, "split"))
        self.assertNotEqual(derive_seed(7, "split"), derive_seed(8, "split"))
        self.assertNotEqual(derive_seed(7, "split", 0), derive_seed(7, "split", 1))
        self.assertNotEqual(derive_seed(7, "split"), derive_seed(7, "init"))
        self.assertGreaterEqual(derive_seed(7, "split"), 0)
        self.assertLess(derive_seed(7, "split"), 2**63)

    def test_generators_reproduce(self):
        np.testing.assert_array_equal(numpy_rng(3, "content", 5).random(4), numpy_rng(3, "content", 5).random(4))
        first = torch_generator(3, "shuffle").initial_seed()
        self.assertEqual(first, torch_generator(3, "shuffle").initial_seed())


class VersioningTests(TestCase):
    def test_git_blob_hash_matches_git(self):
        # `printf 'hello\n' | git hash-object --stdin`
        self.assertEqual(git_blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a")

    def test_code_version_hash_tracks_content(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            (root / "pkg").mkdir()
            (root / "pkg" / "a.py").write_text("x = 1\n")
            before = code_version_hash(root)
            self.assertEqual(before, code_version_hash(root))
            (root / "pkg" / "a.py").write_text("x = 2\n")

            self.assertNotEqual(before, code_version_hash(root))

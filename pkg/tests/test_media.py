import os
import tempfile
import unittest

import numpy as np

from fracsource.errors import ConfigError
from fracsource.media import MediumField, channels, homogeneous, inclusions, load_medium, read_raster, write_raster


class TestMedia(unittest.TestCase):

    def test_homogeneous(self):
        medium = homogeneous(6, 2.5)
        self.assertEqual(medium.cells_per_side, 6)
        self.assertEqual(medium.contrast, 1.0)
        np.testing.assert_allclose(medium.per_cell(), 2.5)

    def test_channels_are_seeded(self):
        a = channels(40, seed=5, contrast=1e3)
        b = channels(40, seed=5, contrast=1e3)
        c = channels(40, seed=6, contrast=1e3)
        np.testing.assert_array_equal(a.kappa, b.kappa)
        self.assertEqual(a.fingerprint(), b.fingerprint())
        self.assertNotEqual(a.fingerprint(), c.fingerprint())
        self.assertAlmostEqual(a.contrast, 1e3)

    def test_layered_channels(self):
        flat = channels(100, seed=5, contrast=500.0, levels=[0.55, 0.85], amplitude=0.0)
        rows = (np.arange(100) + 0.5) / 100
        for y in (0.545, 0.555, 0.845, 0.855):
            np.testing.assert_array_equal(flat.kappa[np.isclose(rows, y)], 500.0)

        meander = channels(100, seed=5, contrast=500.0, levels=[0.55, 0.85], amplitude=0.02)
        clear = (rows < 0.5) | ((rows > 0.6) & (rows < 0.8)) | (rows > 0.9)
        np.testing.assert_array_equal(meander.kappa[clear], 1.0)
        self.assertEqual(meander.kappa.max(), 500.0)

        with self.assertRaises(ConfigError):
            channels(20, seed=5, levels=[0.5, 1.2])

    def test_contrast_limit(self):
        with self.assertRaises(ConfigError):
            channels(20, seed=0, contrast=1e5)
        with self.assertRaises(ConfigError):
            inclusions(20, seed=0, contrast=0.5)

    def test_inclusions_values(self):
        medium = inclusions(40, seed=1, contrast=100.0)
        self.assertEqual(set(np.unique(medium.kappa)), {1.0, 100.0})

    def test_raster_io(self):
        values = np.arange(12, dtype=float).reshape(3, 4) + 0.1
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "kappa.txt")
            write_raster(path, values)
            np.testing.assert_array_equal(read_raster(path), values)

    def test_load_medium_checks_size(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "kappa.txt")
            write_raster(path, np.ones((5, 5)))
            self.assertEqual(load_medium(path, cells_per_side=5).cells_per_side, 5)
            with self.assertRaises(ConfigError):
                load_medium(path, cells_per_side=10)

    def test_truncated_raster(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "kappa.txt")
            with open(path, "w") as f:
                f.write("2 2\n1.0 2.0 3.0\n")
            with self.assertRaises(ConfigError):
                read_raster(path)
            with open(path, "w") as f:
                f.write("2 2\n1.0 x\n3.0 4.0\n")
            with self.assertRaises(ConfigError):
                read_raster(path)

    def test_rejects_nonpositive_kappa(self):
        with self.assertRaises((ConfigError, ValueError)):
            MediumField(np.array([[1.0, 0.0], [1.0, 1.0]]))


if __name__ == "__main__":
    unittest.main()

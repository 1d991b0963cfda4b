"""On-disk cache of multiscale bases so the offline stage runs once per medium."""
from __future__ import annotations

import hashlib
import logging
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from fracsource.errors import ConfigError
from fracsource.gmsfem import MultiscaleBasis
from fracsource.media import MediumField

logger = logging.getLogger(__name__)

_FORMAT_VERSION = 1


class BasisCache:
    """Stores R and the selected eigenvalues as ``.npz`` files under ``directory``.

    Entries are keyed by mesh size, coarse size, medium fingerprint, snapshot
    kind and the number of bases per neighborhood. Writes go to a temporary
    file that is fsynced and renamed into place.
    """

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(cells_per_side: int, blocks_per_side: int, medium: MediumField, kind: str, bases: int) -> str:
        raw = f"v{_FORMAT_VERSION}:{cells_per_side}:{blocks_per_side}:{medium.fingerprint()}:{kind}:{bases}"
        return hashlib.sha256(raw.encode()).hexdigest()[:20]

    def path_for(self, key: str) -> Path:
        return self.directory / f"basis-{key}.npz"

    def load(self, key: str) -> Optional[MultiscaleBasis]:
        path = self.path_for(key)
        if not path.exists():
            self.misses += 1
            logger.info(f"Basis cache miss ({path.name})")
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                if int(data["version"]) != _FORMAT_VERSION or str(data["key"]) != key:
                    raise ConfigError(f"basis cache entry {path} does not match its key", "stale_cache")
                R = sp.csc_matrix(
                    (data["data"], data["indices"], data["indptr"]), shape=tuple(int(s) for s in data["shape"])
                )
                basis = MultiscaleBasis(
                    R=R,
                    eigenvalues=data["eigenvalues"],
                    bases_per_neighborhood=int(data["bases"]),
                    kind=str(data["kind"]),
                )
        except (OSError, KeyError, ValueError) as e:
            logger.warning(f"Ignoring unreadable basis cache entry {path}: {e}")
            self.misses += 1
            return None
        self.hits += 1
        logger.info(f"Basis cache hit ({path.name}, {basis.total_dof} dofs)")
        return basis

    def store(self, key: str, basis: MultiscaleBasis) -> Path:
        path = self.path_for(key)
        temp_path = path.with_suffix(".npz.tmp")
        R = basis.R.tocsc()
        with open(temp_path, "wb") as f:
            np.savez(
                f,
                version=_FORMAT_VERSION,
                key=key,
                data=R.data,
                indices=R.indices,
                indptr=R.indptr,
                shape=np.array(R.shape),
                eigenvalues=basis.eigenvalues,
                bases=basis.bases_per_neighborhood,
                kind=basis.kind,
            )
            f.flush()
            os.fsync(f.fileno())
        os.rename(temp_path, path)
        logger.info(f"Stored basis in cache ({path.name})")
        return path

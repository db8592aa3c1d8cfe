from abc import ABC, abstractmethod
from typing import Dict, Mapping, Optional
import asyncio
from pathlib import Path
import logging
import aiofiles

from app.core.config import settings

logger = logging.getLogger(__name__)


class OutputStore(ABC):
    """
    Abstract destination for run artifacts (CSV tables, state snapshots, JSON).

    Paths are relative to the store root; the scenario runner never touches the
    filesystem directly.
    """

    @abstractmethod
    async def save_text(self, file_path: str, content: str) -> bool:
        """
        Save a text artifact.

        Args:
            file_path: Path relative to the store root
            content: Text content

        Returns:
            bool: True if successful, False otherwise
        """
        pass

    @abstractmethod
    async def read_text(self, file_path: str) -> Optional[str]:
        """
        Read a text artifact back.

        Returns:
            str: File content, None if the file doesn't exist
        """
        pass

    @abstractmethod
    async def file_exists(self, file_path: str) -> bool:
        pass

    @abstractmethod
    async def list_files(self, directory: str = "", pattern: str = "*") -> list[str]:
        """
        List artifacts in a directory.

        Returns:
            list[str]: Sorted paths relative to the store root
        """
        pass

    async def save_all(self, artifacts: Mapping[str, str]) -> Dict[str, bool]:
        """Write several artifacts concurrently; returns success per path."""
        paths = list(artifacts)
        results = await asyncio.gather(*(self.save_text(p, artifacts[p]) for p in paths))
        return dict(zip(paths, results))


class LocalOutputStore(OutputStore):
    """Output store backed by a local directory."""

    def __init__(self, base_path: Optional[str] = None):
        """
        Initialize the local output store.

        Args:
            base_path: Output directory; defaults to settings.output_dir
        """
        self.base_path = Path(base_path or settings.output_dir)
        self.base_path.mkdir(parents=True, exist_ok=True)

        logger.info(f"LocalOutputStore initialized with base_path: {self.base_path}")

    def _get_full_path(self, file_path: str) -> Path:
        file_path = file_path.lstrip("/")
        return self.base_path / file_path

    async def save_text(self, file_path: str, content: str) -> bool:
        try:
            full_path = self._get_full_path(file_path)
            full_path.parent.mkdir(parents=True, exist_ok=True)

            async with aiofiles.open(full_path, 'w', encoding='utf-8', newline='') as f:
                await f.write(content)

            logger.debug(f"Artifact saved: {full_path}")
            return True

        except Exception as e:
            logger.error(f"Failed to save artifact {file_path}: {e}")
            return False

    async def read_text(self, file_path: str) -> Optional[str]:
        try:
            full_path = self._get_full_path(file_path)
            if not full_path.exists():
                return None

            async with aiofiles.open(full_path, 'r', encoding='utf-8', newline='') as f:
                return await f.read()

        except Exception as e:
            logger.error(f"Failed to read artifact {file_path}: {e}")
            return None

    async def file_exists(self, file_path: str) -> bool:
        try:
            return self._get_full_path(file_path).exists()
        except Exception as e:
            logger.error(f"Failed to check artifact existence {file_path}: {e}")
            return False

    async def list_files(self, directory: str = "", pattern: str = "*") -> list[str]:
        try:
            full_dir = self._get_full_path(directory)
            if not full_dir.exists():
                return []

            files = []
            for file_path in full_dir.glob(pattern):
                if file_path.is_file():
                    files.append(str(file_path.relative_to(self.base_path)))
            return sorted(files)

        except Exception as e:
            logger.error(f"Failed to list artifacts in {directory}: {e}")
            return []


def init_storage(base_path: Optional[str] = None) -> OutputStore:
    """Create the output store for a run."""
    return LocalOutputStore(base_path)

import os
import logging
import tempfile
from datetime import datetime
from typing import Any, Dict, Optional

import pandas as pd

from .conf import get_setting
from .exceptions import MalformedTable

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SCHEMA_HEADER = f"# schema_version: {SCHEMA_VERSION}\n"
RESULT_SUFFIXES = ('.csv', '.svg', '.txt', '.json', '.jsonl')


class ResultsStorageService:
    """CSV/SVG result files under one output directory"""

    def __init__(self, output_dir: Optional[str] = None):
        self.storage_dir = output_dir or get_setting('OUTPUT_DIR')
        self._ensure_storage_directory()

    def _ensure_storage_directory(self):
        try:
            os.makedirs(self.storage_dir, exist_ok=True)
            logger.info(f"Results directory ready: {self.storage_dir}")
        except OSError as e:
            logger.error(f"Failed to create results directory {self.storage_dir}: {e}")
            self.storage_dir = tempfile.mkdtemp(prefix='negfeed_')
            logger.info(f"Using temporary results directory: {self.storage_dir}")

    def path_for(self, filename: str) -> str:
        return os.path.join(self.storage_dir, filename)

    def write_table(self, df: pd.DataFrame, filename: str) -> str:
        """Write a CSV preceded by the schema header line"""
        file_path = self.path_for(filename)
        try:
            with open(file_path, 'w', newline='') as f:
                f.write(SCHEMA_HEADER)
                df.to_csv(f, index=False)
            logger.info(f"Wrote {len(df)} rows to {filename}")
            return file_path
        except Exception as e:
            logger.error(f"Failed to write {filename}: {e}")
            raise

    def read_table(self, filename: str) -> pd.DataFrame:
        file_path = filename if os.path.isabs(filename) else self.path_for(filename)
        if not os.path.exists(file_path):
            raise MalformedTable(f"No result table at {file_path}")
        try:
            return pd.read_csv(file_path, comment='#')
        except pd.errors.EmptyDataError as e:
            raise MalformedTable(f"{file_path} holds no table: {e}") from e

    def write_text(self, text: str, filename: str) -> str:
        file_path = self.path_for(filename)
        with open(file_path, 'w') as f:
            f.write(text)
        logger.info(f"Wrote {filename}")
        return file_path

    def get_storage_info(self) -> Dict[str, Any]:
        """Stored result files with sizes and row counts"""
        files = []
        total_size = 0
        try:
            for filename in sorted(os.listdir(self.storage_dir)):
                if not filename.endswith(RESULT_SUFFIXES):
                    continue
                file_path = self.path_for(filename)
                size = os.path.getsize(file_path)
                total_size += size
                entry = {
                    'filename': filename,
                    'size': size,
                    'modified': datetime.fromtimestamp(os.path.getmtime(file_path)).strftime('%Y-%m-%d %H:%M:%S'),
                }
                if filename.endswith('.csv'):
                    try:
                        entry['records'] = len(pd.read_csv(file_path, comment='#'))
                    except Exception:
                        entry['records'] = 0
                files.append(entry)
        except OSError as e:
            logger.error(f"Failed to list results directory: {e}")
        return {
            'total_files': len(files),
            'files': files,
            'total_size': total_size,
            'storage_path': self.storage_dir,
        }

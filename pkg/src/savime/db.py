"""In-process database: storage, catalog, planner and engine behind one object."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

from .catalog import Catalog, load_catalog
from .config import Config
from .engine import Engine, EngineConfig, ResultStream
from .query import ast, build_plan, execute_ddl, is_ddl, optimize, parse_script, parse_text, to_text
from .storage import DatasetStore
from .viz import define_standard_types

log = logging.getLogger(__name__)


@dataclass
class DdlResult:
    statement: str
    status: str


class Database:
    def __init__(self, catalog: Catalog, config: Config | None = None):
        self.catalog = catalog
        self.config = config or Config()
        cfg = self.config
        self.engine = Engine(
            catalog,
            EngineConfig(workers=cfg.workers, grain=cfg.grain, debug=cfg.debug, export_hook=cfg.export_hook),
        )

    @classmethod
    def open(cls, config: Config) -> "Database":
        store = DatasetStore(config.storage)
        catalog = load_catalog(config.catalog_path, store)
        define_standard_types(catalog)
        return cls(catalog, config)

    @property
    def store(self) -> DatasetStore:
        return self.catalog.store

    def run(self, tree: ast.Node, text: str = "") -> DdlResult | ResultStream:
        """Execute one parsed statement."""
        if is_ddl(tree):
            status = execute_ddl(tree, self.catalog)
            log.info("event=ddl status=%r", status)
            return DdlResult(text or to_text(tree), status)
        plan = optimize(build_plan(tree, self.catalog.schema, text))
        return self.engine.run(plan)

    def execute(self, text: str) -> DdlResult | ResultStream:
        return self.run(parse_text(text), text)

    def script(self, text: str) -> Iterator[DdlResult | ResultStream]:
        """Execute statements one at a time; each result is yielded before the next runs."""
        for tree in parse_script(text):
            yield self.run(tree)

    def push_dataset(self, name: str, element_type: str, payload: bytes):
        return self.catalog.create_dataset_bytes(name, element_type, payload)

    def load_dataset(self, name: str, path, element_type: str):
        return self.catalog.create_dataset(name, path, element_type)

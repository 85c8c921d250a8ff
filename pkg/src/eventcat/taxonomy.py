"""Hierarchical category tree used by labels, filters and reports.

The tree is a forest: level-0 nodes are the first-level categories that all
reporting rolls up to; deeper nodes are optional subcategories. A default
seven-category file ships with the package (see ``data/taxonomy.default``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class TaxonomyError(Exception):
    """Invalid taxonomy document or failed lookup."""


@dataclass(frozen=True)
class TaxonomyNode:
    id: int
    name: str
    parent: int | None = None
    level: int = 0
    aliases: tuple[str, ...] = ()


class Taxonomy:
    """Immutable lookup structure over a validated set of nodes."""

    def __init__(self, nodes: list[TaxonomyNode]):
        self._by_id: dict[int, TaxonomyNode] = {n.id: n for n in nodes}
        self._order = [n.id for n in nodes]
        # Name lookup is case-insensitive; a name may legitimately repeat
        # across levels, so each key maps to every node that carries it.
        self._by_name: dict[str, list[TaxonomyNode]] = {}
        for node in nodes:
            for name in (node.name, *node.aliases):
                self._by_name.setdefault(name.lower(), []).append(node)
        self._children: dict[int, list[int]] = {}
        for node in nodes:
            if node.parent is not None:
                self._children.setdefault(node.parent, []).append(node.id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._by_id

    @property
    def nodes(self) -> list[TaxonomyNode]:
        return [self._by_id[i] for i in self._order]

    def first_level_nodes(self) -> list[TaxonomyNode]:
        return [n for n in self.nodes if n.level == 0]

    def node(self, node_id: int) -> TaxonomyNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise TaxonomyError(f"unknown category id {node_id}") from None

    def resolve(self, key: int | str) -> TaxonomyNode:
        """Resolve an id or a (case-insensitive) name/alias to its node."""
        if isinstance(key, bool):
            raise TaxonomyError(f"invalid category key {key!r}")
        if isinstance(key, int):
            return self.node(key)
        matches = self._by_name.get(key.lower(), [])
        if not matches:
            raise TaxonomyError(f"unknown category name {key!r}")
        if len(matches) > 1:
            ids = sorted(n.id for n in matches)
            raise TaxonomyError(f"ambiguous category name {key!r} (ids {ids})")
        return matches[0]

    def first_level_of(self, node_id: int) -> int:
        """Return the level-0 ancestor (identity for level-0 nodes)."""
        node = self.node(node_id)
        while node.parent is not None:
            node = self._by_id[node.parent]
        return node.id

    def children(self, node_id: int) -> list[int]:
        self.node(node_id)
        return list(self._children.get(node_id, []))

    def subtree_ids(self, node_id: int) -> set[int]:
        """The node's id plus all descendant ids."""
        out = {self.node(node_id).id}
        stack = self.children(node_id)
        while stack:
            nid = stack.pop()
            out.add(nid)
            stack.extend(self.children(nid))
        return out

    def name_path(self, node_id: int) -> tuple[str, ...]:
        """Names from the level-0 ancestor down to the node itself."""
        chain = [self.node(node_id)]
        while chain[-1].parent is not None:
            chain.append(self._by_id[chain[-1].parent])
        return tuple(n.name for n in reversed(chain))

    def serialize(self, path: str | Path) -> None:
        """Write the node set back out in the taxonomy file format."""
        lines = []
        for node in self.nodes:
            record: dict = {"id": node.id, "name": node.name, "parent": node.parent}
            if node.aliases:
                record["aliases"] = list(node.aliases)
            lines.append(json.dumps(record, ensure_ascii=False, separators=(",", ":")))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_records(text: str) -> list[dict]:
    records = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TaxonomyError(f"taxonomy line {number}: {exc}") from exc
        if not isinstance(record, dict) or "id" not in record or "name" not in record:
            raise TaxonomyError(f"taxonomy line {number}: need id and name fields")
        records.append(record)
    return records


def parse_taxonomy(text: str) -> Taxonomy:
    """Build and validate a Taxonomy from taxonomy-file text."""
    records = _parse_records(text)
    if not records:
        raise TaxonomyError("empty taxonomy document")

    by_id: dict[int, dict] = {}
    for record in records:
        node_id = record["id"]
        if not isinstance(node_id, int) or isinstance(node_id, bool) or node_id < 0:
            raise TaxonomyError(f"category id must be a non-negative integer, got {node_id!r}")
        if node_id in by_id:
            raise TaxonomyError(f"duplicate category id {node_id}")
        by_id[node_id] = record

    # Derive levels by walking parent chains; detects dangling parents and cycles.
    levels: dict[int, int] = {}

    def level_of(node_id: int, trail: set[int]) -> int:
        if node_id in levels:
            return levels[node_id]
        if node_id in trail:
            raise TaxonomyError(f"cycle through category id {node_id}")
        parent = by_id[node_id].get("parent")
        if parent is None:
            level = 0
        else:
            if parent not in by_id:
                raise TaxonomyError(f"category {node_id} has dangling parent {parent}")
            level = level_of(parent, trail | {node_id}) + 1
        levels[node_id] = level
        return level

    nodes = []
    for node_id, record in by_id.items():
        level = level_of(node_id, set())
        aliases = tuple(record.get("aliases", ()))
        nodes.append(
            TaxonomyNode(
                id=node_id,
                name=str(record["name"]),
                parent=record.get("parent"),
                level=level,
                aliases=aliases,
            )
        )

    # Names (and aliases) must be unambiguous within a level.
    seen: dict[tuple[int, str], int] = {}
    for node in nodes:
        for name in (node.name, *node.aliases):
            key = (node.level, name.lower())
            if key in seen and seen[key] != node.id:
                raise TaxonomyError(
                    f"name {name!r} is ambiguous at level {node.level} "
                    f"(ids {seen[key]} and {node.id})"
                )
            seen[key] = node.id

    return Taxonomy(nodes)


def load_taxonomy(source: str | Path) -> Taxonomy:
    """Load a taxonomy from a file path."""
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TaxonomyError(f"cannot read taxonomy file {path}: {exc}") from exc
    return parse_taxonomy(text)


def default_taxonomy_text() -> str:
    """Text of the taxonomy file bundled with the package."""
    return resources.files("eventcat.data").joinpath("taxonomy.default").read_text("utf-8")


def default_taxonomy() -> Taxonomy:
    """The shipped seven first-level categories (ids 0-6)."""
    return parse_taxonomy(default_taxonomy_text())

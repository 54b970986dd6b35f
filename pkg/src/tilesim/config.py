"""Machine configuration and validation.

A SimConfig describes one tiled machine: an R x C mesh of tiles (each tile =
core + L1I + L1D + L1.5 + one shared-L2 slice with its directory), one memory
controller node hanging off a mesh edge, and three physical NoCs of a common
link width. validate() returns a frozen ValidatedConfig carrying the derived
geometry every component reads; all constraint checking lives there.
"""

import dataclasses
import json
from dataclasses import dataclass, field

VALID_BLOCK_SIZES = (16, 32, 64)
NOC_WIDTH_MIN = 64
NOC_WIDTH_MAX = 704
VSETVL_MODES = ("renaming", "stall")
SRAM_MODES = ("parallel", "serial")


class ConfigError(ValueError):
    """Base class for configuration rejections."""


class BlockSizeInvalid(ConfigError):
    pass


class NocWidthOutOfRange(ConfigError):
    pass


class GeometryMismatch(ConfigError):
    pass


class TopologyInvalid(ConfigError):
    pass


@dataclass(frozen=True)
class Latencies:
    """Fixed component latencies in cycles. All must be >= 1 except link >= 0."""

    l1_hit: int = 1
    l15_hit: int = 3
    l2_tag: int = 3
    l2_data: int = 5
    router_hop: int = 1
    link: int = 1
    memory: int = 100


@dataclass
class SimConfig:
    """User-facing knobs. Defaults describe the stock 4-tile machine."""

    mesh_rows: int = 2
    mesh_cols: int = 2
    block_size_bytes: int = 64
    noc_width_bits: int = 64
    l1i_size_bytes: int = 16 * 1024
    l1d_size_bytes: int = 16 * 1024
    l15_size_bytes: int = 32 * 1024
    l2_total_size_bytes: int = 64 * 1024
    l1d_assoc: int = 4
    l15_assoc: int = 4
    l2_assoc: int = 4
    l1d_mshrs: int = 64
    l15_mshrs: int = 64
    vlen_bits: int = 128
    vsetvl_mode: str = "renaming"
    l2_sram_mode: str = "parallel"
    latencies: Latencies = field(default_factory=Latencies)
    chipset_attach: tuple = (0, 0)
    memory_size_bytes: int = 256 * 1024 * 1024
    rng_seed: int = 1

    def validate(self) -> "ValidatedConfig":
        return ValidatedConfig.from_config(self)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["chipset_attach"] = list(self.chipset_attach)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "latencies" in d:
            lat = d["latencies"]
            if not isinstance(lat, dict):
                raise ConfigError("latencies must be an object")
            lat_known = {f.name for f in dataclasses.fields(Latencies)}
            lat_unknown = sorted(set(lat) - lat_known)
            if lat_unknown:
                raise ConfigError(f"unknown latency fields: {', '.join(lat_unknown)}")
            d["latencies"] = Latencies(**lat)
        if "chipset_attach" in d:
            d["chipset_attach"] = tuple(d["chipset_attach"])
        return cls(**d)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "SimConfig":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class ValidatedConfig:
    """A SimConfig that passed every check, plus derived geometry.

    Tile ids are row-major: tile = row * mesh_cols + col. The memory
    controller is node id num_tiles, attached to the edge tile at
    chipset_attach through that tile's free edge-facing router port.
    """

    cfg: SimConfig
    num_tiles: int
    l1i_sets: int
    l1d_sets: int
    l15_sets: int
    l2_slice_bytes: int
    l2_slice_sets: int
    chipset_node: int
    chipset_tile: int
    chipset_port: str

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "ValidatedConfig":
        c = dataclasses.replace(cfg, latencies=cfg.latencies,
                                chipset_attach=tuple(cfg.chipset_attach))
        if c.block_size_bytes not in VALID_BLOCK_SIZES:
            raise BlockSizeInvalid(
                f"block_size_bytes={c.block_size_bytes}, expected one of {VALID_BLOCK_SIZES}")
        w = c.noc_width_bits
        if not (NOC_WIDTH_MIN <= w <= NOC_WIDTH_MAX) or w % 8 != 0:
            raise NocWidthOutOfRange(
                f"noc_width_bits={w}, expected multiple of 8 in [{NOC_WIDTH_MIN}, {NOC_WIDTH_MAX}]")
        if c.mesh_rows < 1 or c.mesh_cols < 1:
            raise TopologyInvalid(f"mesh {c.mesh_rows}x{c.mesh_cols} has no tiles")
        num_tiles = c.mesh_rows * c.mesh_cols
        row, col = c.chipset_attach
        if not (0 <= row < c.mesh_rows and 0 <= col < c.mesh_cols):
            raise TopologyInvalid(f"chipset_attach {c.chipset_attach} is outside the mesh")
        on_edge = row in (0, c.mesh_rows - 1) or col in (0, c.mesh_cols - 1)
        if not on_edge:
            raise TopologyInvalid(f"chipset_attach {c.chipset_attach} must sit on a mesh edge")
        if c.vsetvl_mode not in VSETVL_MODES:
            raise ConfigError(f"vsetvl_mode={c.vsetvl_mode!r}, expected one of {VSETVL_MODES}")
        if c.l2_sram_mode not in SRAM_MODES:
            raise ConfigError(f"l2_sram_mode={c.l2_sram_mode!r}, expected one of {SRAM_MODES}")

        for name, assoc in (("l1d", c.l1d_assoc), ("l15", c.l15_assoc), ("l2", c.l2_assoc)):
            if assoc < 1:
                raise GeometryMismatch(f"{name}_assoc={assoc} must be >= 1")
        for name, mshrs in (("l1d", c.l1d_mshrs), ("l15", c.l15_mshrs)):
            if mshrs < 1:
                raise GeometryMismatch(f"{name}_mshrs={mshrs} must be >= 1")

        bs = c.block_size_bytes

        def sets_of(name: str, size: int, assoc: int) -> int:
            way_bytes = assoc * bs
            if size <= 0 or size % way_bytes != 0:
                raise GeometryMismatch(
                    f"{name} size {size} is not a positive multiple of assoc*block = {way_bytes}")
            return size // way_bytes

        l1i_sets = sets_of("l1i", c.l1i_size_bytes, 1)  # L1I is direct-mapped
        l1d_sets = sets_of("l1d", c.l1d_size_bytes, c.l1d_assoc)
        l15_sets = sets_of("l15", c.l15_size_bytes, c.l15_assoc)
        if c.l2_total_size_bytes % num_tiles != 0:
            raise GeometryMismatch(
                f"l2_total_size_bytes={c.l2_total_size_bytes} not divisible by {num_tiles} tiles")
        l2_slice = c.l2_total_size_bytes // num_tiles
        l2_slice_sets = sets_of("l2 slice", l2_slice, c.l2_assoc)

        if not _is_pow2(c.vlen_bits) or not (64 <= c.vlen_bits <= 4096):
            raise GeometryMismatch(
                f"vlen_bits={c.vlen_bits} must be a power of two in [64, 4096]")
        lat = c.latencies
        for f_ in dataclasses.fields(Latencies):
            v = getattr(lat, f_.name)
            minimum = 0 if f_.name == "link" else 1
            if not isinstance(v, int) or v < minimum:
                raise GeometryMismatch(f"latency {f_.name}={v} must be an int >= {minimum}")
        if c.memory_size_bytes < bs or c.memory_size_bytes % bs != 0:
            raise GeometryMismatch("memory_size_bytes must be a positive multiple of the block size")
        if c.rng_seed < 0:
            raise ConfigError("rng_seed must be non-negative")

        if col == 0:
            port = "W"
        elif col == c.mesh_cols - 1:
            port = "E"
        elif row == 0:
            port = "N"
        else:
            port = "S"
        chipset_tile = row * c.mesh_cols + col
        return cls(cfg=c, num_tiles=num_tiles, l1i_sets=l1i_sets, l1d_sets=l1d_sets,
                   l15_sets=l15_sets, l2_slice_bytes=l2_slice, l2_slice_sets=l2_slice_sets,
                   chipset_node=num_tiles, chipset_tile=chipset_tile, chipset_port=port)

    # -- address and topology helpers ------------------------------------

    def block_of(self, addr: int) -> int:
        return addr // self.cfg.block_size_bytes

    def block_addr(self, addr: int) -> int:
        return addr - addr % self.cfg.block_size_bytes

    def home_tile(self, addr: int) -> int:
        """Home slice for an address: block-index interleaving across tiles."""
        return (addr // self.cfg.block_size_bytes) % self.num_tiles

    def tile_coord(self, tile: int) -> tuple:
        return (tile // self.cfg.mesh_cols, tile % self.cfg.mesh_cols)

    def vlmax(self, sew_bits: int) -> int:
        return self.cfg.vlen_bits // sew_bits

    @property
    def num_nodes(self) -> int:
        return self.num_tiles + 1

    @property
    def block_size_bytes(self) -> int:
        return self.cfg.block_size_bytes

    @property
    def latencies(self) -> Latencies:
        return self.cfg.latencies

    def l15_hit_latency(self) -> int:
        lat = self.cfg.latencies
        if self.cfg.l2_sram_mode == "serial":
            return lat.l2_tag + lat.l15_hit
        return lat.l15_hit

    def l2_hit_latency(self) -> int:
        lat = self.cfg.latencies
        if self.cfg.l2_sram_mode == "serial":
            return lat.l2_tag + lat.l2_data
        return max(lat.l2_tag, lat.l2_data)


def standalone_config(**overrides) -> SimConfig:
    """Single-tile machine for core-level experiments.

    Mirrors an FPGA-prototype regime: one tile owning the whole L2, and a
    main-memory latency that is small in core cycles (slow core clock
    relative to DRAM). Used by the vector-speedup experiments.
    """
    base = dict(mesh_rows=1, mesh_cols=1, latencies=Latencies(memory=20))
    base.update(overrides)
    return SimConfig(**base)
